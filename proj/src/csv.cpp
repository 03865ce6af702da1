#include "cehr/csv.hpp"

#include <fstream>

namespace cehr {

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

void throw_row_error(const std::string& path, std::size_t line, const std::string& detail) {
    throw DataError(path + ":" + std::to_string(line) + ": " + detail);
}

void read_csv(const std::string& path, const std::vector<std::string>& expected_header,
              const std::function<void(const std::vector<std::string_view>&, std::size_t)>& row) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open file");
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (!header_seen) {
            header_seen = true;
            if (fields.size() != expected_header.size() ||
                !std::equal(fields.begin(), fields.end(), expected_header.begin())) {
                std::string want;
                for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
                throw_row_error(path, lineno, "header must be '" + want + "'");
            }
            continue;
        }
        if (fields.size() != expected_header.size()) {
            throw_row_error(path, lineno,
                            "expected " + std::to_string(expected_header.size()) + " fields, got " +
                                std::to_string(fields.size()));
        }
        row(fields, lineno);
    }
    if (!header_seen) throw DataError(path + ": missing header row");
}

}  // namespace cehr
