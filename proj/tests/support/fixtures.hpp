#pragma once

// Reference fixtures stored as text: "rows cols" then one row per line.

#include <torch/torch.h>

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace edgelbam::testing {

inline std::string fixture_path(const std::string& name) { return std::string(EDGELBAM_TEST_DATA) + "/" + name; }

/// float64 [rows, cols].
inline torch::Tensor load_fixture(const std::string& name) {
    std::ifstream in(fixture_path(name));
    if (!in) throw std::runtime_error("missing fixture " + name);
    int64_t rows = 0, cols = 0;
    in >> rows >> cols;
    std::vector<double> values(static_cast<size_t>(rows * cols));
    for (auto& v : values) in >> v;
    if (!in) throw std::runtime_error("truncated fixture " + name);
    return torch::tensor(values, torch::kFloat64).view({rows, cols});
}

inline std::vector<double> load_column(const std::string& name) {
    std::ifstream in(fixture_path(name));
    if (!in) throw std::runtime_error("missing fixture " + name);
    std::vector<double> values;
    for (double v; in >> v;) values.push_back(v);
    return values;
}

}  // namespace edgelbam::testing
