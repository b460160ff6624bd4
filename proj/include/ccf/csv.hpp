#pragma once

#include <string>
#include <vector>

namespace ccf {

// %.9g, the float convention shared with the dataset files. Stable across
// reruns, so CSV outputs can be compared byte for byte.
std::string fmt_g9(double v);

// Whole-file write; throws std::runtime_error with the path on I/O failure.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace ccf
