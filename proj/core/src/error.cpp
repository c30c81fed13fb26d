#include "hiersev/error.hpp"

namespace hiersev {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::MultipleRoots: return "MultipleRoots";
        case Errc::OrphanNode: return "OrphanNode";
        case Errc::UnbalancedLeaves: return "UnbalancedLeaves";
        case Errc::CycleDetected: return "CycleDetected";
        case Errc::InvalidEdge: return "InvalidEdge";
        case Errc::HeightOutOfRange: return "HeightOutOfRange";
        case Errc::NotALeaf: return "NotALeaf";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::NonFiniteInput: return "NonFiniteInput";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::TargetNotInMask: return "TargetNotInMask";
        case Errc::DegenerateMask: return "DegenerateMask";
        case Errc::InvalidAttackSpec: return "InvalidAttackSpec";
        case Errc::TooFewIterations: return "TooFewIterations";
        case Errc::HeadSizeMismatch: return "HeadSizeMismatch";
        case Errc::ConfigInvalid: return "ConfigInvalid";
        case Errc::LabelOutOfRange: return "LabelOutOfRange";
        case Errc::DimTooSmall: return "DimTooSmall";
        case Errc::EmptySuite: return "EmptySuite";
        case Errc::ParseError: return "ParseError";
        case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(Errc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

}  // namespace hiersev
