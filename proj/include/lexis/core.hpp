#pragma once

// Shared primitives: the rectangular age x year grid, error types, number
// formatting and checksums used by every artifact writer.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lexis {

inline constexpr const char* kToolName = "lexiskit";
inline constexpr const char* kToolVersion = "0.1.0";

// Input that cannot be tokenized/typed. Carries file and line for reporting.
class parse_error : public std::runtime_error {
public:
    parse_error(const std::string& file, long line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
          file_(file), line_(line) {}
    const std::string& file() const { return file_; }
    long line() const { return line_; }

private:
    std::string file_;
    long line_;
};

// Well-formed input that violates a domain invariant.
class validation_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure (non-convergence, impossible request).
class numeric_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Gender { female, male, total };
enum class SourceTag { crude, corrected, simulated };

inline std::string to_string(Gender g) {
    switch (g) {
        case Gender::female: return "female";
        case Gender::male: return "male";
        default: return "total";
    }
}

inline std::string to_string(SourceTag s) {
    switch (s) {
        case SourceTag::crude: return "crude";
        case SourceTag::corrected: return "corrected";
        default: return "simulated";
    }
}

inline Gender gender_from_string(const std::string& s) {
    if (s == "female" || s == "f") return Gender::female;
    if (s == "male" || s == "m") return Gender::male;
    if (s == "total" || s == "t") return Gender::total;
    throw validation_error("unknown gender '" + s + "'");
}

// Dense rectangular grid indexed by integer age (rows) and calendar year
// (columns). Out-of-range access throws.
class Grid {
public:
    Grid() = default;
    Grid(int age_min, int age_max, int year_min, int year_max, double fill = 0.0)
        : age_min_(age_min), year_min_(year_min),
          n_ages_(age_max - age_min + 1), n_years_(year_max - year_min + 1) {
        if (n_ages_ <= 0 || n_years_ <= 0)
            throw validation_error("grid ranges must be non-empty");
        values_.assign(static_cast<std::size_t>(n_ages_) * n_years_, fill);
    }

    int age_min() const { return age_min_; }
    int age_max() const { return age_min_ + n_ages_ - 1; }
    int year_min() const { return year_min_; }
    int year_max() const { return year_min_ + n_years_ - 1; }
    int n_ages() const { return n_ages_; }
    int n_years() const { return n_years_; }
    bool empty() const { return values_.empty(); }
    std::size_t size() const { return values_.size(); }

    bool contains(int age, int year) const {
        return age >= age_min_ && age < age_min_ + n_ages_ &&
               year >= year_min_ && year < year_min_ + n_years_;
    }

    std::size_t index(int age, int year) const {
        if (!contains(age, year))
            throw std::out_of_range("grid cell (" + std::to_string(age) + "," +
                                    std::to_string(year) + ") out of range");
        return static_cast<std::size_t>(age - age_min_) * n_years_ +
               (year - year_min_);
    }

    double at(int age, int year) const { return values_[index(age, year)]; }
    double& at(int age, int year) { return values_[index(age, year)]; }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    bool same_shape(const Grid& o) const {
        return age_min_ == o.age_min_ && year_min_ == o.year_min_ &&
               n_ages_ == o.n_ages_ && n_years_ == o.n_years_;
    }

private:
    int age_min_ = 0, year_min_ = 0;
    int n_ages_ = 0, n_years_ = 0;
    std::vector<double> values_;
};

// Shortest decimal representation that round-trips the double exactly.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Fixed number of significant digits, for plot-ready CSV surfaces.
inline std::string format_sig(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return std::string(buf);
}

inline double parse_double_token(const std::string& tok, const std::string& file,
                                 long line) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw parse_error(file, line, "expected a number, got '" + tok + "'");
    return v;
}

inline long parse_int_token(const std::string& tok, const std::string& file,
                            long line) {
    long v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw parse_error(file, line, "expected an integer, got '" + tok + "'");
    return v;
}

inline std::vector<std::string> split_whitespace(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline std::vector<std::string> split_char(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

// FNV-1a, 64-bit. Used for config hashes and artifact checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

inline std::uint64_t checksum_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot open '" + path + "' for checksum");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

}  // namespace lexis
