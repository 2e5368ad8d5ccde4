#pragma once

#include <stdexcept>
#include <string>

namespace rover {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem-level failure (file missing, unreadable, unwritable).
/// Content-level problems (bad magic, malformed rows, ...) derive from
/// Error directly; the CLI maps the two groups to different exit codes.
struct IoError : Error {
    using Error::Error;
};

}  // namespace rover
