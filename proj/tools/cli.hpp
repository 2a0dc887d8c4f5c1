#pragma once

// The nafrssr command-line front end. run() is the whole program minus
// process setup, so tests can drive it in-process.

#include <iosfwd>
#include <string>
#include <vector>

#include "nafrssr/model.hpp"

namespace nafrssr::cli {

// Exit codes: 0 success, 1 runtime failure or failed check, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// A preset name, or the path of a key = value config file.
ArchConfig resolve_model(const std::string& spec);

// "HxW" with positive sides.
std::pair<int, int> parse_hw(const std::string& text);

struct BenchStats {
    double median = 0;
    double q1 = 0;
    double q3 = 0;
    double iqr() const { return q3 - q1; }
};

// Quartiles by linear interpolation between order statistics.
BenchStats summarize_times(std::vector<double> seconds);

// Times `iters` no-grad forward passes on a fixed random LR stereo pair.
std::vector<double> time_forward(const Model& model, int h, int w, int iters, int warmup = 1);

}  // namespace nafrssr::cli
