#pragma once

#include <string>
#include <vector>

namespace eghn {

// 2D scatter of node positions (xy projection), one color per cluster id.
std::string scatter_svg(const std::vector<double>& xs, const std::vector<double>& ys,
                        const std::vector<int>& cluster_ids, const std::string& title);

// Train/validation loss curves on a log-free linear axis.
std::string loss_curves_svg(const std::vector<double>& train, const std::vector<double>& val,
                            const std::string& title);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace eghn
