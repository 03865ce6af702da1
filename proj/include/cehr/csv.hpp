#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cehr {

/// Data-file problem; what() carries "path:line: detail" when a row is at fault.
class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Splits on commas. Identifiers are never quoted, so no quote handling.
std::vector<std::string_view> split_csv(std::string_view line);

/// Reads a headed CSV file. The header must equal `expected_header` exactly.
/// `row` gets the fields and the 1-based line number; blank lines are skipped.
void read_csv(const std::string& path, const std::vector<std::string>& expected_header,
              const std::function<void(const std::vector<std::string_view>&, std::size_t)>& row);

[[noreturn]] void throw_row_error(const std::string& path, std::size_t line, const std::string& detail);

}  // namespace cehr
