#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hiersev {

enum class Errc {
    // hierarchy
    MultipleRoots,
    OrphanNode,
    UnbalancedLeaves,
    CycleDetected,
    InvalidEdge,
    HeightOutOfRange,
    NotALeaf,
    // netcore
    DimensionMismatch,
    NonFiniteInput,
    ShapeMismatch,
    // attacks
    TargetNotInMask,
    DegenerateMask,
    InvalidAttackSpec,
    // curriculum
    TooFewIterations,
    HeadSizeMismatch,
    ConfigInvalid,
    // bench / data
    LabelOutOfRange,
    DimTooSmall,
    EmptySuite,
    // plumbing
    ParseError,
    IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the named codes above;
/// `what()` is "<CodeName>: <detail>".
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& detail);

    [[nodiscard]] Errc code() const noexcept { return code_; }
    [[nodiscard]] std::string_view name() const noexcept { return errc_name(code_); }

private:
    Errc code_;
};

}  // namespace hiersev
