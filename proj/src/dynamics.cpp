#include "cavsim/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace cavsim {

double normalize_angle(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a <= -M_PI) a += 2.0 * M_PI;
    if (a > M_PI) a -= 2.0 * M_PI;
    return a;
}

double clamp(double x, double lo, double hi) {
    return x < lo ? lo : (x > hi ? hi : x);
}

StateRate bicycle_derivative(const VehicleState& s, const ControlInput& u,
                             const VehicleParams& p) {
    StateRate r;
    r.dx = s.v * std::cos(s.psi);
    r.dy = s.v * std::sin(s.psi);
    r.dpsi = s.v / p.wheelbase_L * std::tan(u.delta);
    r.dv = u.a;
    return r;
}

VehicleState step(const VehicleState& s, const ControlInput& u,
                  const VehicleParams& p, double dt) {
    if (!(std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.psi) &&
          std::isfinite(s.v) && std::isfinite(u.delta) && std::isfinite(u.a))) {
        throw std::domain_error("dynamics::step: non-finite state or control");
    }
    const StateRate r = bicycle_derivative(s, u, p);
    VehicleState n;
    n.x = s.x + dt * r.dx;
    n.y = s.y + dt * r.dy;
    n.psi = normalize_angle(s.psi + dt * r.dpsi);
    n.v = clamp(s.v + dt * r.dv, p.v_min, p.v_max);
    return n;
}

}  // namespace cavsim
