#include "cehr/config_error.hpp"

namespace cehr {

namespace {

std::string join(const std::string& source, const std::vector<std::string>& violations) {
    std::string out = source + ": ";
    for (std::size_t i = 0; i < violations.size(); ++i) out += (i ? "; " : "") + violations[i];
    return out;
}

}  // namespace

ConfigError::ConfigError(const std::string& source, std::vector<std::string> violations)
    : std::runtime_error(join(source, violations)), violations_(std::move(violations)) {}

}  // namespace cehr
