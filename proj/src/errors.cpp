#include "sepuq/errors.hpp"

namespace sepuq {

ValidationError::ValidationError(const std::string& what) : std::invalid_argument(what) {}

NumericalError::NumericalError(const std::string& what) : std::runtime_error(what) {}

} // namespace sepuq
