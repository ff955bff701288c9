#pragma once

#include <string>

#include "stackgame/core_model.hpp"

namespace fixtures {

inline std::string path(const std::string& name) { return std::string(STACKGAME_FIXTURE_DIR) + "/" + name; }

/// Scalar game with both sets unconstrained.
inline stackgame::GameSpec scalar() {
    return stackgame::GameSpec::scalar(0.2, 0.3, 0.3, 0.05, 0.1, 0.1, 1.0, 0.5, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0);
}

/// Scalar game with interval constraints that bind at part of the nodes.
inline stackgame::GameSpec constrained() {
    stackgame::GameSpec s = scalar();
    s.gamma1 = stackgame::ConstraintSet::interval(-0.4, 1.0);
    s.gamma2 = stackgame::ConstraintSet::interval(-0.2, 0.5);
    return s;
}

/// Strong coupling on which plain Picard diverges.
inline stackgame::GameSpec strong_coupling() {
    return stackgame::GameSpec::scalar(0.2, 1.0, 1.0, 0.05, 0.1, 0.1, 1.0, 0.5, 1.0, 1.0, 2.0, 0.5, 1.0, 1.0);
}

/// Equal ratios for the symmetrizing transform with lambda = mu = 1.
inline stackgame::GameSpec symmetric_ratios() {
    return stackgame::GameSpec::scalar(0.2, 0.3, 0.3, 0.05, 0.1, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
}

}  // namespace fixtures
