#pragma once

#include <stdexcept>
#include <string>

namespace dott {

// Bad caller input: shapes, ranges, config values.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class NumericErrorKind {
    EigensolveFailure,
    SingularGram,
    EigenvalueCrossing,
    RankExplosion,
    ElementCap,
    InsufficientGrid,
    RankDeficient,
};

inline const char* to_string(NumericErrorKind k)
{
    switch (k) {
    case NumericErrorKind::EigensolveFailure: return "eigensolve-failure";
    case NumericErrorKind::SingularGram: return "singular-gram";
    case NumericErrorKind::EigenvalueCrossing: return "eigenvalue-crossing";
    case NumericErrorKind::RankExplosion: return "rank-explosion";
    case NumericErrorKind::ElementCap: return "element-cap";
    case NumericErrorKind::InsufficientGrid: return "insufficient-grid-dimensions";
    case NumericErrorKind::RankDeficient: return "rank-deficient";
    }
    return "numeric-failure";
}

class NumericError : public std::runtime_error {
public:
    NumericError(NumericErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {
    }
    NumericErrorKind kind() const noexcept { return kind_; }

private:
    NumericErrorKind kind_;
};

} // namespace dott
