#include "diffbody/prompts.hpp"

#include <cmath>

#include "diffbody/error.hpp"

namespace diffbody::prompts {

double bmi(double height_m, double weight_kg) {
    if (!(height_m > 0.0) || !(weight_kg > 0.0)) throw InvalidArgument("bmi needs positive height and weight");
    return weight_kg / (height_m * height_m);
}

std::optional<std::string> adjective_for_bmi(double b) {
    if (!std::isfinite(b) || !(b > 0.0)) throw InvalidArgument("bmi must be finite and positive");
    if (b <= 15.0) return "skinny";
    if (b <= 18.5) return "under weight";
    if (b <= 25.0) return std::nullopt;
    if (b <= 30.0) return "overweight";
    return "fat";
}

std::string build_prompt(const PromptSpec& spec) {
    if (spec.token.empty()) throw InvalidArgument("prompt token must not be empty");
    if (spec.orientation.empty()) throw InvalidArgument("prompt orientation must not be empty");
    std::string s = "photo of a ";
    if (spec.adjective && !spec.adjective->empty()) s += *spec.adjective + " ";
    s += spec.token + " ";
    s += spec.stage == PromptStage::Body ? spec.body_noun : spec.face_noun;
    s += " facing " + spec.orientation;
    return s;
}

std::string orientation_from_direction(const Vec3& f) {
    const double n = norm(f);
    if (!(n > 0.0)) return "front";
    const Vec3 d = f * (1.0 / n);
    // Toward the viewer is -z in camera space.
    if (std::abs(d.y) > std::max(std::abs(d.x), std::abs(d.z))) return d.y < 0.0 ? "up" : "down";
    if (std::abs(d.x) > std::abs(d.z)) return d.x < 0.0 ? "left" : "right";
    return d.z < 0.0 ? "front" : "back";
}

}  // namespace diffbody::prompts
