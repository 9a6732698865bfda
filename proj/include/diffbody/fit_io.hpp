#pragma once

#include <filesystem>
#include <string>

#include "diffbody/body_model.hpp"
#include "diffbody/camera.hpp"

namespace diffbody::geometry {

struct Fit {
    BodyParams params;
    Camera camera;
    bool operator==(const Fit&) const = default;
};

// Fit file (JSON):
//   { "pose": [..], "shape": [..], "height_m": h, "weight_kg": w,
//     "global_rotation": [3], "global_translation": [3],      (optional)
//     "camera": { "intrinsics": {"fx","fy","cx","cy","width","height"},
//                 "rotation": [9, row-major], "translation": [3] } }
// Missing required keys raise ConfigError naming the key.
Fit parse_fit(const std::string& text);
std::string serialize_fit(const Fit& fit);
Fit load_fit(const std::filesystem::path& path);
void save_fit(const std::filesystem::path& path, const Fit& fit);

// OBJ with a comment-prefixed extension section so plain OBJ readers ignore it:
//   #@parts <n>
//   #@p <part_label> <visibility: u|v|i>     (one line per triangle, in order)
std::string serialize_mesh_obj(const TexturedMesh& mesh);
TexturedMesh parse_mesh_obj(const std::string& text);

}  // namespace diffbody::geometry
