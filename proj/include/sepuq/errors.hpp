#ifndef SEPUQ_ERRORS_HPP
#define SEPUQ_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sepuq {

// Bad inputs: wrong sizes, out-of-range parameters, inconsistent configs.
// The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument
{
public:
    explicit ValidationError(const std::string& what);
};

// A computation that was well-posed on entry but broke down numerically
// (non-convergence, loss of definiteness, underflow). Exit code 3.
class NumericalError : public std::runtime_error
{
public:
    explicit NumericalError(const std::string& what);
};

} // namespace sepuq

#endif
