#pragma once

#include <optional>
#include <string>

#include "diffbody/vec.hpp"

namespace diffbody::prompts {

enum class PromptStage { Body, Face };

struct PromptSpec {
    std::string token = "sks";
    std::optional<std::string> adjective;
    std::string orientation = "front";
    PromptStage stage = PromptStage::Body;
    std::string body_noun = "man";
    std::string face_noun = "face";
};

// weight / height^2. Throws InvalidArgument on non-positive input.
double bmi(double height_m, double weight_kg);

// Body-shape word for a BMI band; nullopt for the 18.5-25 band.
std::optional<std::string> adjective_for_bmi(double b);

// "photo of a {adjective }{token} {noun} facing {orientation}".
std::string build_prompt(const PromptSpec& spec);

// Camera-relative facing word for a head forward direction given in camera
// coordinates (x right, y down, z away from the viewer). "left"/"right" are
// from the viewer's side.
std::string orientation_from_direction(const Vec3& forward_camera);

}  // namespace diffbody::prompts
