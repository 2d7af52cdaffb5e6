#ifndef LRNOISE_ERRORS_HPP
#define LRNOISE_ERRORS_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lrnoise {

// Shape or size disagreement between operands.
class DimError : public std::runtime_error {
public:
    explicit DimError(const std::string& what) : std::runtime_error(what) {}
};

// Operation applied to an object in the wrong state (e.g. normalizing twice).
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid numeric argument (negative gain, bad sigma, ...).
class ParamError : public std::runtime_error {
public:
    explicit ParamError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed file content. Carries the byte offset where parsing failed.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, uint64_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    uint64_t offset() const { return offset_; }

private:
    uint64_t offset_;
};

// Dataset/profile level problems: missing files, missing ISO entries, empty sets.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or score during training.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lrnoise

#endif
