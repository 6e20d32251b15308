#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "vflow/tensor.hpp"

namespace vflow {

struct StepLoss {
    int step = 0;
    double loss = 0;
    double cvfm = 0;
    double kl = 0;
};

enum class TrainStatus { Ok, AbortedNonFinite };

inline void write_loss_csv(const std::string& path, const std::vector<StepLoss>& losses) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open loss csv for writing: " + path);
    os << "step,loss,cvfm,kl\n";
    for (const auto& l : losses) {
        os << l.step << "," << l.loss << "," << l.cvfm << "," << l.kl << "\n";
    }
}

}  // namespace vflow
