// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tvscope {

// Malformed or incompatible input (files, shapes, counts). CLI exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An operation produced an empty result that the caller did not allow. CLI exit code 3.
class EmptyResultError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tvscope
