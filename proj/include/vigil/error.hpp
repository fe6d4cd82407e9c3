#pragma once

#include <stdexcept>
#include <string>

namespace vigil {

// Bad input data or configuration (missing file, malformed CSV/JSON, schema
// violations). The CLI maps this to exit status 1.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A model backend failed, timed out or answered with a malformed payload.
class BackendError : public std::runtime_error {
public:
    BackendError(const std::string& what, std::string diagnostics = {})
        : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}

    const std::string& diagnostics() const noexcept { return diagnostics_; }

private:
    std::string diagnostics_;
};

}  // namespace vigil
