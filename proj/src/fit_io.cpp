#include "diffbody/fit_io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "diffbody/error.hpp"
#include "diffbody/image_io.hpp"

namespace diffbody::geometry {
namespace {

using nlohmann::json;

const json& require(const json& j, const char* key, const std::string& where = "") {
    if (!j.is_object() || !j.contains(key))
        throw ConfigError("fit file: missing key \"" + where + key + "\"");
    return j.at(key);
}

std::vector<double> numbers(const json& j, const char* key, std::size_t expect = 0, const std::string& where = "") {
    const json& v = require(j, key, where);
    if (!v.is_array()) throw ConfigError("fit file: \"" + where + key + "\" must be an array");
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) throw ConfigError("fit file: \"" + where + key + "\" must contain numbers");
        out.push_back(x.get<double>());
    }
    if (expect && out.size() != expect)
        throw ConfigError("fit file: \"" + where + key + "\" must have " + std::to_string(expect) + " entries");
    return out;
}

double number(const json& j, const char* key, const std::string& where = "") {
    const json& v = require(j, key, where);
    if (!v.is_number()) throw ConfigError("fit file: \"" + where + key + "\" must be a number");
    return v.get<double>();
}

Vec3 vec3(const std::vector<double>& v) { return {v[0], v[1], v[2]}; }
json to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

}  // namespace

Fit parse_fit(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("fit file: ") + e.what());
    }
    Fit f;
    f.params.pose = numbers(j, "pose");
    f.params.shape = numbers(j, "shape");
    f.params.height_m = number(j, "height_m");
    f.params.weight_kg = number(j, "weight_kg");
    if (j.contains("global_rotation")) f.params.global_rotation = vec3(numbers(j, "global_rotation", 3));
    if (j.contains("global_translation")) f.params.global_translation = vec3(numbers(j, "global_translation", 3));
    const json& cam = require(j, "camera");
    const json& intr = require(cam, "intrinsics", "camera.");
    f.camera.fx = number(intr, "fx", "camera.intrinsics.");
    f.camera.fy = number(intr, "fy", "camera.intrinsics.");
    f.camera.cx = number(intr, "cx", "camera.intrinsics.");
    f.camera.cy = number(intr, "cy", "camera.intrinsics.");
    f.camera.width = static_cast<int>(number(intr, "width", "camera.intrinsics."));
    f.camera.height = static_cast<int>(number(intr, "height", "camera.intrinsics."));
    const auto r = numbers(cam, "rotation", 9, "camera.");
    std::copy(r.begin(), r.end(), f.camera.rotation.m.begin());
    f.camera.translation = vec3(numbers(cam, "translation", 3, "camera."));
    if (!(f.params.height_m > 0) || !(f.params.weight_kg > 0))
        throw ConfigError("fit file: height_m and weight_kg must be positive");
    if (f.camera.width <= 0 || f.camera.height <= 0) throw ConfigError("fit file: camera size must be positive");
    return f;
}

std::string serialize_fit(const Fit& f) {
    json j;
    j["pose"] = f.params.pose;
    j["shape"] = f.params.shape;
    j["height_m"] = f.params.height_m;
    j["weight_kg"] = f.params.weight_kg;
    j["global_rotation"] = to_json(f.params.global_rotation);
    j["global_translation"] = to_json(f.params.global_translation);
    j["camera"]["intrinsics"] = {{"fx", f.camera.fx}, {"fy", f.camera.fy}, {"cx", f.camera.cx},
                                 {"cy", f.camera.cy}, {"width", f.camera.width}, {"height", f.camera.height}};
    j["camera"]["rotation"] = f.camera.rotation.m;
    j["camera"]["translation"] = to_json(f.camera.translation);
    return j.dump(2);
}

Fit load_fit(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open fit file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_fit(ss.str());
}

void save_fit(const std::filesystem::path& path, const Fit& fit) { write_file_atomic(path, serialize_fit(fit)); }

std::string serialize_mesh_obj(const TexturedMesh& mesh) {
    std::ostringstream out;
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "# diffbody mesh\n";
    for (const auto& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
    const bool uv = mesh.has_uv();
    if (uv)
        for (std::size_t i = 0; i < mesh.uv.size(); ++i)
            // OBJ texture space has v up.
            out << "vt " << mesh.uv[i].x << ' ' << 1.0 - mesh.uv[i].y << (mesh.uv_valid[i] ? "" : " 0 invalid") << '\n';
    for (const auto& t : mesh.triangles) {
        out << 'f';
        for (int i : t) {
            out << ' ' << i + 1;
            if (uv) out << '/' << i + 1;
        }
        out << '\n';
    }
    out << "#@parts " << mesh.triangles.size() << '\n';
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        char vis = 'u';
        if (mesh.has_visibility()) vis = mesh.visibility[t] == Visibility::Visible ? 'v' : (mesh.visibility[t] == Visibility::Invisible ? 'i' : 'u');
        out << "#@p " << mesh.part_labels[t] << ' ' << vis << '\n';
    }
    return out.str();
}

TexturedMesh parse_mesh_obj(const std::string& text) {
    TexturedMesh m;
    std::istringstream in(text);
    std::string line;
    bool any_vis = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Vec3 v;
            ls >> v.x >> v.y >> v.z;
            m.vertices.push_back(v);
        } else if (tag == "vt") {
            Vec2 uv;
            ls >> uv.x >> uv.y;
            uv.y = 1.0 - uv.y;
            std::string w, flag;
            ls >> w >> flag;
            m.uv.push_back(uv);
            m.uv_valid.push_back(flag == "invalid" ? 0 : 1);
        } else if (tag == "f") {
            std::array<int, 3> t{};
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                if (!(ls >> tok)) throw GeometryError("mesh: face needs three vertices");
                t[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
            }
            m.triangles.push_back(t);
        } else if (tag == "#@p") {
            int label = 0;
            char vis = 'u';
            ls >> label >> vis;
            m.part_labels.push_back(label);
            m.visibility.push_back(vis == 'v' ? Visibility::Visible : (vis == 'i' ? Visibility::Invisible : Visibility::Unknown));
            any_vis = any_vis || vis != 'u';
        }
    }
    if (!any_vis) m.visibility.clear();
    m.validate();
    return m;
}

}  // namespace diffbody::geometry
