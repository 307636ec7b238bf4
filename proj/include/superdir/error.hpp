// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace superdir {

// Bad input: violated preconditions, malformed configs or files.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Numerically ill-posed request (singular Gram matrix, vanishing steering
// field, non-finite training loss).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace superdir
