#ifndef MFC_ERRORS_HPP
#define MFC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mfc {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid inputs: bad generator matrices, out-of-domain controls, shape mismatches.
struct ValidationError : Error {
    using Error::Error;
};

/// Malformed or inconsistent experiment configuration (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// Numerical failure: non-finite states, solver non-convergence (CLI exit code 3).
struct NumericalError : Error {
    using Error::Error;
};

/// A solver was asked to handle a model outside its supported class.
struct UnsupportedClassError : Error {
    using Error::Error;
};

}  // namespace mfc

#endif
