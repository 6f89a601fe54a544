#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scasnn {

// Shape disagreement between operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid construction parameters (architecture, stream, optimizer...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller broke an operation's precondition.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LookupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data (empty class, overlapping labels...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary/text file does not follow its layout.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// Training diverged or otherwise failed at runtime.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace scasnn
