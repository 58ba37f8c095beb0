#pragma once

#include <string>
#include <vector>

#include "protots/tensor.hpp"

namespace protots {

struct NamedParameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;  // false: excluded from optimizer updates
};

using ParameterList = std::vector<NamedParameter>;

}  // namespace protots
