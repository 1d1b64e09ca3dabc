#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace canmap {

// thrown when a training loss turns non-finite; carries the step index
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, int64_t step)
        : std::runtime_error(what), step_(step) {}
    int64_t step() const { return step_; }

private:
    int64_t step_;
};

using WarnHandler = std::function<void(const std::string&)>;

void warn(const std::string& msg);
// install a handler (tests use this); returns the previous one
WarnHandler set_warn_handler(WarnHandler h);

} // namespace canmap
