#pragma once

#include "core.hpp"
#include "forward_model.hpp"

namespace pnpmag {

/// Direct-inversion baseline: |A^H y| scaled to a unit maximum.
inline MagnitudeVolume back_projection(const MeasurementSet& y, const ForwardOperator& op) {
    if (y.geometry_digest != op.digest())
        throw ArgumentError("measurement set was not produced with this geometry");
    MagnitudeVolume out = magnitude(op.apply_adjoint(y.values));
    const double peak = max_value(out.values());
    if (!(peak > 0)) throw NumericalError("back projection is identically zero");
    for (double& v : out.values()) v /= peak;
    return out;
}

}  // namespace pnpmag
