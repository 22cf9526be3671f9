#ifndef MESEG_ERROR_HPP
#define MESEG_ERROR_HPP

#include <stdexcept>
#include <string>

namespace meseg {

// Error categories. These map one-to-one onto the C API status codes and
// onto the CLI's distinct exit codes, so every layer reports the same kind
// of failure the same way.
enum class Errc {
  invalid_argument = 1,  // bad parameter value
  dim_mismatch = 2,      // grids with incompatible dims/spacing
  io = 3,                // filesystem failures
  format = 4,            // malformed file contents (NIfTI, JSON, checkpoint)
  numeric = 5,           // non-finite values where finite ones are required
  diverged = 6,          // training produced a non-finite loss
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace meseg

#endif
