#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cehr {

/// Invalid configuration. Carries every violation found, not only the first;
/// what() joins them with "; ".
class ConfigError : public std::runtime_error {
   public:
    ConfigError(const std::string& source, std::vector<std::string> violations);
    const std::vector<std::string>& violations() const { return violations_; }

   private:
    std::vector<std::string> violations_;
};

}  // namespace cehr
