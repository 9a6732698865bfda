#include "diffbody/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "diffbody/error.hpp"
#include "diffbody/image_io.hpp"
#include "diffbody/prompts.hpp"
#include "diffbody/regions.hpp"
#include "diffbody/resample.hpp"
#include "diffbody/texture.hpp"
#include "diffbody/toy_backend.hpp"
#include "diffbody/visibility.hpp"

namespace diffbody::pipeline {

namespace fs = std::filesystem;
using geometry::BodyPart;
using geometry::label_of;
using nlohmann::json;

namespace {

[[noreturn]] void rethrow_in_stage(const std::string& stage) {
    const std::string p = "stage " + stage + ": ";
    try {
        throw;
    } catch (const BackendError& e) {
        throw BackendError(p + e.what());
    } catch (const GeometryError& e) {
        throw GeometryError(p + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(p + e.what());
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(p + e.what());
    } catch (const Error& e) {
        throw Error(p + e.what());
    }
}

template <class F>
auto in_stage(const std::string& name, F&& f) {
    try {
        return f();
    } catch (const Error&) {
        rethrow_in_stage(name);
    }
}

std::string resolve(const std::string& p, const fs::path& base) {
    if (p.empty() || p == kToyReference || p == kToyFit) return p;
    const fs::path path(p);
    if (path.is_absolute() || base.empty()) return p;
    return (base / path).lexically_normal().string();
}

Image as_rgb(const Image& im) {
    if (im.channels() == 3) return im;
    Image out(im.height(), im.width(), 3);
    for (int y = 0; y < im.height(); ++y)
        for (int x = 0; x < im.width(); ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = im.at(y, x, 0);
    return out;
}

json keypoints_json(const Keypoints& k) {
    json a = json::array();
    for (const auto& p : k) a.push_back({p.position.x, p.position.y, p.confidence});
    return a;
}

Keypoints keypoints_from_json(const json& j) {
    Keypoints out;
    for (const auto& p : j) {
        if (!p.is_array() || p.size() < 2) throw ConfigError("keypoints must be [x, y] or [x, y, confidence] arrays");
        out.push_back(Keypoint{{p[0].get<double>(), p[1].get<double>()}, p.size() > 2 ? p[2].get<double>() : 1.0});
    }
    return out;
}

json params_json(const geometry::BodyParams& p) {
    return {{"pose", p.pose},
            {"shape", p.shape},
            {"height_m", p.height_m},
            {"weight_kg", p.weight_kg},
            {"global_rotation", {p.global_rotation.x, p.global_rotation.y, p.global_rotation.z}},
            {"global_translation", {p.global_translation.x, p.global_translation.y, p.global_translation.z}}};
}

json warnings_json(const std::vector<geometry::Warning>& ws) {
    json a = json::array();
    for (const auto& w : ws) a.push_back({{"code", w.code}, {"message", w.message}});
    return a;
}

}  // namespace

// ---- configuration ----------------------------------------------------------

void PipelineConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("pipeline config: " + m); };
    if (backend.empty()) fail("backend id is empty");
    if (reference.empty()) fail("reference is empty");
    if (fit.empty()) fail("fit is empty");
    if (fit == kToyFit && reference != kToyReference) fail("toy-fit needs the toy reference");
    if (toy_height <= 0 || toy_width <= 0 || toy_height % 4 || toy_width % 4)
        fail("toy size must be positive multiples of 4");
    if (face_crop_size <= 0 || face_crop_size % 4) fail("face_crop_size must be a positive multiple of 4");
    if (!(crop_margin >= 0.0)) fail("crop_margin must be >= 0");
    if (pad_band < 0) fail("pad_band must be >= 0");
    if (!(background >= 0.0 && background <= 1.0)) fail("background must be in [0, 1]");
    if (token.empty()) fail("token must not be empty");
    if (target.height_m && !(*target.height_m > 0.0)) fail("target height must be positive");
    if (target.weight_kg && !(*target.weight_kg > 0.0)) fail("target weight must be positive");
    for (const auto* p : {&reference, &fit, &reference_mask, &target_image}) {
        if (p->empty() || *p == kToyReference || *p == kToyFit) continue;
        if (!fs::exists(*p)) fail("path does not exist: " + *p);
    }
    stage1.validate();
    stage2.validate();
}

PipelineConfig config_from_json(const json& in, const fs::path& base) {
    const json& j = (in.is_object() && in.contains("config") && in["config"].is_object()) ? in["config"] : in;
    if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
    PipelineConfig c;
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "backend") c.backend = v.get<std::string>();
            else if (k == "backend_options") {
                for (const auto& [ok, ov] : v.items()) c.backend_options[ok] = ov.get<double>();
            } else if (k == "reference") c.reference = resolve(v.get<std::string>(), base);
            else if (k == "reference_mask") c.reference_mask = resolve(v.get<std::string>(), base);
            else if (k == "fit") c.fit = resolve(v.get<std::string>(), base);
            else if (k == "target_image") c.target_image = resolve(v.get<std::string>(), base);
            else if (k == "toy_size") {
                c.toy_height = v.at(0).get<int>();
                c.toy_width = v.at(1).get<int>();
            } else if (k == "toy_pose") {
                if (!v.is_null()) c.toy_pose = v.get<std::vector<double>>();
            } else if (k == "target") {
                for (const auto& [tk, tv] : v.items()) {
                    if (tv.is_null()) continue;
                    if (tk == "pose") c.target.pose = tv.get<std::vector<double>>();
                    else if (tk == "keypoints") c.target.keypoints = keypoints_from_json(tv);
                    else if (tk == "height_m") c.target.height_m = tv.get<double>();
                    else if (tk == "weight_kg") c.target.weight_kg = tv.get<double>();
                    else throw ConfigError("pipeline config: unknown target key \"" + tk + "\"");
                }
            } else if (k == "stage1") c.stage1 = refinement::config_from_json(v);
            else if (k == "stage2") c.stage2 = refinement::config_from_json(v);
            else if (k == "face_crop_size") c.face_crop_size = v.get<int>();
            else if (k == "crop_margin") c.crop_margin = v.get<double>();
            else if (k == "pad_band") c.pad_band = v.get<int>();
            else if (k == "background") c.background = v.get<double>();
            else if (k == "token") c.token = v.get<std::string>();
            else if (k == "body_noun") c.body_noun = v.get<std::string>();
            else if (k == "face_noun") c.face_noun = v.get<std::string>();
            else if (k == "output_dir") c.output_dir = resolve(v.get<std::string>(), base);
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "stage1_only") c.stage1_only = v.get<bool>();
            else throw ConfigError("pipeline config: unknown key \"" + k + "\"");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("pipeline config: ") + e.what());
    }
    return c;
}

json to_json(const PipelineConfig& c) {
    json target = json::object();
    if (c.target.pose) target["pose"] = *c.target.pose;
    if (c.target.keypoints) target["keypoints"] = keypoints_json(*c.target.keypoints);
    if (c.target.height_m) target["height_m"] = *c.target.height_m;
    if (c.target.weight_kg) target["weight_kg"] = *c.target.weight_kg;
    auto abs = [](const std::string& p) {
        if (p.empty() || p == kToyReference || p == kToyFit) return p;
        return fs::absolute(p).lexically_normal().string();
    };
    return {{"backend", c.backend},
            {"backend_options", c.backend_options},
            {"reference", abs(c.reference)},
            {"reference_mask", abs(c.reference_mask)},
            {"fit", abs(c.fit)},
            {"target_image", abs(c.target_image)},
            {"toy_size", {c.toy_height, c.toy_width}},
            {"toy_pose", c.toy_pose ? json(*c.toy_pose) : json(nullptr)},
            {"target", target},
            {"stage1", refinement::to_json(c.stage1)},
            {"stage2", refinement::to_json(c.stage2)},
            {"face_crop_size", c.face_crop_size},
            {"crop_margin", c.crop_margin},
            {"pad_band", c.pad_band},
            {"background", c.background},
            {"token", c.token},
            {"body_noun", c.body_noun},
            {"face_noun", c.face_noun},
            {"output_dir", abs(c.output_dir.string())},
            {"seed", c.seed},
            {"stage1_only", c.stage1_only}};
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

// ---- toy subject --------------------------------------------------------------

namespace {

struct Palette {
    std::array<std::array<double, 3>, geometry::kPartLabelCount> base{};
    std::array<double, geometry::kPartLabelCount> phase{};
};

Palette toy_palette(std::uint64_t seed) {
    std::mt19937_64 rng(diffusion::derive_seed(seed, 0xC0105ULL));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto colour = [&](double lo, double hi) {
        return std::array<double, 3>{lo + (hi - lo) * u(rng), lo + (hi - lo) * u(rng), lo + (hi - lo) * u(rng)};
    };
    Palette p;
    const auto shirt = colour(0.1, 0.9);
    const auto trousers = colour(0.05, 0.5);
    const double tone = 0.75 + 0.15 * u(rng);
    const std::array<double, 3> skin{tone, tone * 0.78, tone * 0.64};
    const std::array<double, 3> hair{0.15 + 0.2 * u(rng), 0.10 + 0.1 * u(rng), 0.06 + 0.08 * u(rng)};
    for (int l = 0; l < geometry::kPartLabelCount; ++l) p.phase[l] = 6.283185307179586 * u(rng);
    using B = BodyPart;
    p.base[label_of(B::Torso)] = shirt;
    p.base[label_of(B::LeftUpperArm)] = shirt;
    p.base[label_of(B::RightUpperArm)] = shirt;
    p.base[label_of(B::LeftForearm)] = skin;
    p.base[label_of(B::RightForearm)] = skin;
    p.base[label_of(B::Head)] = hair;
    p.base[label_of(B::Face)] = skin;
    for (auto l : {B::LeftThigh, B::LeftShin, B::RightThigh, B::RightShin}) p.base[label_of(l)] = trousers;
    return p;
}

}  // namespace

geometry::RenderResult render_toy_appearance(const geometry::BodyModel& model, const ToyScene& scene,
                                             const geometry::TexturedMesh& mesh, const Camera& camera, int height,
                                             int width, double background) {
    const auto* toy = dynamic_cast<const geometry::ToyBodyModel*>(&model);
    if (!toy) throw GeometryError("toy appearance needs the toy body model");
    const auto rest = toy->rest_vertices(scene.params);
    if (rest.size() != mesh.vertices.size()) throw GeometryError("toy appearance needs the subject's topology");
    const Palette pal = toy_palette(scene.seed);
    const int face = label_of(BodyPart::Face);

    // Facial features placed relative to the rest-pose face patch.
    Vec3 lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        if (mesh.part_labels[t] != face) continue;
        for (int k : mesh.triangles[t]) {
            const Vec3& v = rest[k];
            lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
            hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
        }
    }
    const double fw = hi.x - lo.x, fh = hi.y - lo.y, cx = (lo.x + hi.x) / 2;
    struct Feature {
        double x, y, r, shade;
    };
    const std::array<Feature, 4> features{{{cx - 0.22 * fw, lo.y + 0.66 * fh, 0.09 * fw, 0.12},
                                           {cx + 0.22 * fw, lo.y + 0.66 * fh, 0.09 * fw, 0.12},
                                           {cx, lo.y + 0.45 * fh, 0.05 * fw, 0.55},
                                           {cx, lo.y + 0.24 * fh, 0.12 * fw, 0.30}}};

    const geometry::Shader shader = [&](int tri, const std::array<double, 3>& b) {
        const auto& t = mesh.triangles[tri];
        const Vec3 p = rest[t[0]] * b[0] + rest[t[1]] * b[1] + rest[t[2]] * b[2];
        const int l = mesh.part_labels[tri];
        std::array<double, 3> c = pal.base[l];
        double wave = 0.08 * std::sin(2 * 3.141592653589793 * p.y / 0.09 + pal.phase[l]) +
                      0.04 * std::sin(2 * 3.141592653589793 * (p.x + p.z) / 0.05 + pal.phase[l]);
        if (l == face || l == label_of(BodyPart::LeftForearm) || l == label_of(BodyPart::RightForearm)) wave *= 0.25;
        for (double& v : c) v += wave;
        if (l == face) {
            for (const auto& f : features) {
                const double d = std::hypot(p.x - f.x, p.y - f.y);
                if (d < f.r) {
                    const double s = 1.0 - d / f.r;
                    for (int k = 0; k < 3; ++k) c[k] = c[k] * (1 - s) + f.shade * c[k] * 0.4 * s;
                }
            }
        }
        for (double& v : c) v = std::clamp(v, 0.0, 1.0);
        return c;
    };
    return geometry::render_shaded(mesh, camera, shader, width, height, background);
}

ToyScene make_toy_scene(const geometry::BodyModel& model, int height, int width, std::uint64_t seed,
                        double background, const std::optional<std::vector<double>>& pose) {
    std::mt19937_64 rng(diffusion::derive_seed(seed, 0x5CE1EULL));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ToyScene s;
    s.seed = seed;
    s.params = model.default_params();
    using J = geometry::ToyBodyModel::PoseJoint;
    auto set = [&](int joint, int axis, double v) {
        if (3 * joint + axis < static_cast<int>(s.params.pose.size())) s.params.pose[3 * joint + axis] = v;
    };
    set(J::LShoulder, 2, 0.25 + 0.1 * u(rng));
    set(J::RShoulder, 2, -0.25 - 0.1 * u(rng));
    set(J::LElbow, 2, 0.1 * u(rng));
    set(J::RElbow, 2, 0.1 * u(rng));
    set(J::LHip, 2, 0.06 + 0.03 * u(rng));
    set(J::RHip, 2, -0.06 - 0.03 * u(rng));
    if (pose) {
        if (static_cast<int>(pose->size()) != model.pose_dim())
            throw ConfigError("toy_pose needs " + std::to_string(model.pose_dim()) + " values");
        s.params.pose = *pose;
    }
    s.params.height_m = 1.70 + 0.08 * u(rng);
    s.params.weight_kg = 68.0 + 10.0 * u(rng);
    s.params.shape = model.shape_for(s.params.height_m, s.params.weight_kg);
    s.camera = geometry::toy_camera(width, height);
    s.render = render_toy_appearance(model, s, model.build(s.params), s.camera, height, width, background);
    s.joints = flag_out_of_bounds(geometry::project_joints(model, s.params, s.camera), height, width);
    return s;
}

// ---- preparation ----------------------------------------------------------------

Prepared prepare(const PipelineConfig& cfg) {
    cfg.validate();
    Prepared p;
    p.base_backend = in_stage("backend", [&] { return diffusion::create_backend(cfg.backend, cfg.backend_options); });
    p.model = geometry::make_toy_body_model();
    const auto& model = *p.model;

    in_stage("reference", [&] {
        if (cfg.reference == kToyReference) {
            p.scene = make_toy_scene(model, cfg.toy_height, cfg.toy_width, cfg.seed, cfg.background, cfg.toy_pose);
            p.reference = p.scene->render.image;
            p.reference_silhouette = p.scene->render.silhouette();
        } else {
            p.reference = as_rgb(read_png(cfg.reference));
            if (p.reference.height() % 4 || p.reference.width() % 4)
                throw ConfigError("reference image sides must be multiples of 4");
            if (!cfg.reference_mask.empty()) {
                p.reference_silhouette = read_mask_png(cfg.reference_mask);
                if (p.reference_silhouette.height() != p.reference.height() ||
                    p.reference_silhouette.width() != p.reference.width())
                    throw ConfigError("reference mask size differs from the reference image");
            }
        }
        return 0;
    });
    const int H = p.reference.height(), W = p.reference.width();

    p.fit = in_stage("fit", [&] {
        if (cfg.fit == kToyFit)
            return geometry::Fit{geometry::fit_toy_body(model, p.reference_silhouette, p.scene->joints, p.scene->camera),
                                 p.scene->camera};
        return geometry::load_fit(cfg.fit);
    });
    const Camera& cam = p.fit.camera;

    in_stage("silhouette", [&] {
        const auto frags = geometry::rasterize(model.build(p.fit.params), cam, W, H);
        const auto& labels = model.build(p.fit.params).part_labels;
        if (p.reference_silhouette.height() == 0) {
            p.reference_silhouette = Mask(H, W);
            for (std::size_t i = 0; i < frags.triangle.size(); ++i)
                p.reference_silhouette.data()[i] = frags.triangle[i] >= 0 ? 1 : 0;
        }
        p.reference_labels = LabelMap(H, W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int t = frags.at(y, x);
                if (t >= 0 && p.reference_silhouette.at(y, x)) p.reference_labels.at(y, x) = labels[t];
            }
        return 0;
    });

    p.padded_reference = in_stage("reflect_pad", [&] {
        return geometry::reflect_pad(p.reference, p.reference_silhouette, cfg.pad_band);
    });
    p.textured = in_stage("project_texture", [&] {
        return geometry::project_texture(model.build(p.fit.params), cam, p.padded_reference);
    });
    p.textured = in_stage("label_visibility", [&] { return geometry::label_visibility(p.textured, cam); });

    in_stage("edit_params", [&] {
        geometry::PoseTarget target = p.fit.params.pose;
        if (cfg.target.keypoints) target = *cfg.target.keypoints;
        else if (cfg.target.pose) target = *cfg.target.pose;
        const double h = cfg.target.height_m.value_or(p.fit.params.height_m);
        const double w = cfg.target.weight_kg.value_or(p.fit.params.weight_kg);
        auto r = geometry::edit_params(model, p.fit.params, target, h, w, cam);
        p.edited = r.params;
        for (auto& wn : r.warnings) p.warnings.push_back(wn);
        p.shape_edit = h != p.fit.params.height_m || w != p.fit.params.weight_kg;
        return 0;
    });

    in_stage("render", [&] {
        p.edited_mesh = geometry::transfer_surface_attributes(model.build(p.edited), p.textured);
        p.rendered = geometry::render(p.edited_mesh, cam, p.padded_reference, W, H, cfg.background);
        p.keypoints = flag_out_of_bounds(geometry::project_joints(model, p.edited, cam), H, W);
        return 0;
    });

    in_stage("prompts", [&] {
        const int face = label_of(BodyPart::Face);
        std::optional<std::string> orientation;
        if (p.rendered.part_labels.contains(face)) {
            const auto crop = geometry::crop_part(p.rendered.image, p.rendered.part_labels, face, cfg.face_crop_size,
                                                  cfg.crop_margin);
            orientation = p.base_backend->orientation_detector().orientation(crop.image);
        }
        if (!orientation)
            orientation = prompts::orientation_from_direction(cam.rotation * model.head_forward(p.edited));
        p.orientation = *orientation;
        const auto adjective = prompts::adjective_for_bmi(prompts::bmi(p.edited.height_m, p.edited.weight_kg));
        prompts::PromptSpec spec{cfg.token, adjective, p.orientation, prompts::PromptStage::Body, cfg.body_noun,
                                 cfg.face_noun};
        p.prompt_body = prompts::build_prompt(spec);
        spec.stage = prompts::PromptStage::Face;
        p.prompt_face = prompts::build_prompt(spec);
        return 0;
    });

    p.backend = in_stage("personalize", [&] {
        const int face = label_of(BodyPart::Face);
        if (p.reference_labels.contains(face)) {
            p.reference_face = geometry::crop_part(p.reference, p.reference_labels, face, cfg.face_crop_size,
                                                   cfg.crop_margin)
                                   .image;
        } else {
            p.warnings.push_back({"reference_face_missing", "no face pixels in the reference; facial refinement off"});
        }
        return p.base_backend->personalize(
            diffusion::Personalization{p.reference, p.reference_labels, p.reference_face, cfg.token,
                                        p.prompt_body, p.prompt_face});
    });

    in_stage("ground_truth", [&] {
        if (!cfg.target_image.empty()) {
            p.ground_truth = as_rgb(read_png(cfg.target_image));
        } else if (p.scene) {
            p.ground_truth = render_toy_appearance(model, *p.scene, model.build(p.edited), cam, H, W, cfg.background).image;
        }
        return 0;
    });
    return p;
}

// ---- refinement ------------------------------------------------------------------

namespace {

using ArtifactSink = std::function<void(const std::string& stage, const EditResult& partial)>;

EditResult refine_prepared(Prepared prepared, const PipelineConfig& cfg, const ArtifactSink* sink) {
    const auto t0 = std::chrono::steady_clock::now();
    EditResult r;
    r.prepared = std::move(prepared);
    const Prepared& p = r.prepared;
    if (sink) (*sink)("render", r);

    refinement::RefinementConfig c1 = cfg.stage1;
    c1.seed = cfg.seed;
    r.step1 = in_stage("step1", [&] {
        refinement::FullbodyInputs in{p.rendered.image, p.rendered.invisible_mask, p.prompt_body, p.keypoints,
                                      p.reference,      p.reference_labels,        p.rendered.part_labels};
        return refinement::step1_fullbody(in, c1, *p.backend);
    });
    r.final_image = r.step1.output;
    if (sink) (*sink)("step1", r);

    if (!cfg.stage1_only) {
        refinement::RefinementConfig c2 = cfg.stage2;
        c2.seed = cfg.seed;
        c2.shape_edit = c2.shape_edit || p.shape_edit;
        if (p.reference_face.empty()) {
            refinement::FaceStageResult skipped;
            skipped.output = r.step1.output;
            skipped.skipped = true;
            skipped.warnings.push_back({"face_skipped", "no reference face; facial refinement skipped"});
            r.step2 = std::move(skipped);
        } else {
            r.step2 = in_stage("step2", [&] {
                refinement::FaceInputs in{r.step1.output, p.rendered.part_labels, p.prompt_face, p.reference_face,
                                          p.rendered.image, cfg.face_crop_size,   cfg.crop_margin};
                return refinement::step2_face(in, c2, *p.backend);
            });
        }
        r.final_image = r.step2->output;
        if (sink) (*sink)("step2", r);
    }
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

Image label_image(const LabelMap& labels) {
    Image out(labels.height(), labels.width(), 1);
    for (int y = 0; y < labels.height(); ++y)
        for (int x = 0; x < labels.width(); ++x) out.at(y, x) = labels.at(y, x) * 20 / 255.0;
    return out;
}

Image mask_image(const Mask& m) {
    Image out(m.height(), m.width(), 1);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) out.at(y, x) = m.at(y, x) ? 1.0 : 0.0;
    return out;
}

void write_render_artifacts(const fs::path& out, const Prepared& p) {
    fs::create_directories(out / "masks");
    fs::create_directories(out / "step1");
    write_png_atomic(out / "step1" / "rendered.png", p.rendered.image);
    write_png_atomic(out / "step1" / "reference.png", p.reference);
    write_png_atomic(out / "step1" / "reference_padded.png", p.padded_reference);
    write_png_atomic(out / "masks" / "invisible.png", mask_image(p.rendered.invisible_mask));
    write_png_atomic(out / "masks" / "silhouette.png", mask_image(p.rendered.silhouette()));
    write_png_atomic(out / "masks" / "reference_silhouette.png", mask_image(p.reference_silhouette));
    write_png_atomic(out / "masks" / "part_labels.png", label_image(p.rendered.part_labels));
    write_file_atomic(out / "step1" / "keypoints.json", keypoints_json(p.keypoints).dump(2) + "\n");
    write_file_atomic(out / "edited_mesh.obj", geometry::serialize_mesh_obj(p.edited_mesh));
}

json placement_json(const geometry::Placement& pl) {
    return {{"box", {pl.box.x, pl.box.y, pl.box.width, pl.box.height}},
            {"out_size", {pl.out_height, pl.out_width}},
            {"source_size", {pl.source_height, pl.source_width}}};
}

json manifest_json(const PipelineConfig& cfg, const EditResult& r) {
    const Prepared& p = r.prepared;
    json stages = json::object();
    json chosen = json::object();
    json s1 = {{"warnings", warnings_json(r.step1.warnings)}};
    if (r.step1.block) {
        s1["report"] = refinement::to_json(*r.step1.block);
        chosen["step1"] = r.step1.block->best_index;
    }
    stages["step1"] = s1;
    if (r.step2) {
        json s2 = {{"warnings", warnings_json(r.step2->warnings)}, {"skipped", r.step2->skipped}};
        if (r.step2->block) {
            s2["report"] = refinement::to_json(*r.step2->block);
            chosen["step2"] = r.step2->block->best_index;
        }
        if (r.step2->placement) s2["placement"] = placement_json(*r.step2->placement);
        stages["step2"] = s2;
    }
    return {{"status", "ok"},
            {"config", to_json(cfg)},
            {"backend", p.backend->id()},
            {"seed", cfg.seed},
            {"prompts", {{"body", p.prompt_body}, {"face", p.prompt_face}, {"orientation", p.orientation}}},
            {"fitted_params", params_json(p.fit.params)},
            {"edited_params", params_json(p.edited)},
            {"shape_edit", p.shape_edit},
            {"stages", stages},
            {"chosen_iterations", chosen},
            {"final_image", "final.png"},
            {"warnings", warnings_json(p.warnings)},
            {"wall_time_s", r.wall_time_s}};
}

}  // namespace

EditResult run_edit(const PipelineConfig& cfg) { return refine_prepared(prepare(cfg), cfg, nullptr); }

json edit(const PipelineConfig& cfg) {
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    fs::remove(out / "final.png");
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const ArtifactSink sink = [&](const std::string& stage, const EditResult& r) {
            const Prepared& p = r.prepared;
            if (stage == "render") write_render_artifacts(out, p);
            if (stage == "step1") write_png_atomic(out / "step1" / "output.png", r.step1.output);
            if (stage == "step2" && r.step2 && !r.step2->skipped) {
                fs::create_directories(out / "step2");
                write_png_atomic(out / "step2" / "crop_input.png", r.step2->crop_input);
                write_png_atomic(out / "step2" / "crop_refined.png", r.step2->crop_refined);
                write_png_atomic(out / "step2" / "reference_face.png", p.reference_face);
                write_png_atomic(out / "masks" / "face_interior.png", mask_image(r.step2->interior));
            }
        };
        EditResult r = refine_prepared(prepare(cfg), cfg, &sink);
        r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        json m = manifest_json(cfg, r);
        write_png_atomic(out / "final.png", r.final_image);
        write_file_atomic(out / "manifest.json", m.dump(2) + "\n");
        return m;
    } catch (const Error& e) {
        json m = {{"status", "failed"}, {"error", e.what()}, {"config", to_json(cfg)}};
        write_file_atomic(out / "manifest.json", m.dump(2) + "\n");
        throw;
    }
}

json render_only(const PipelineConfig& cfg) {
    const Prepared p = prepare(cfg);
    write_render_artifacts(cfg.output_dir, p);
    json m = {{"status", "ok"},
              {"config", to_json(cfg)},
              {"prompts", {{"body", p.prompt_body}, {"face", p.prompt_face}}},
              {"edited_params", params_json(p.edited)},
              {"invisible_pixels", p.rendered.invisible_mask.count()},
              {"warnings", warnings_json(p.warnings)}};
    write_file_atomic(cfg.output_dir / "manifest.json", m.dump(2) + "\n");
    return m;
}

// ---- harnesses ---------------------------------------------------------------------

std::vector<double> default_noise_strengths() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

namespace {

std::string percent_label(double s) {
    std::ostringstream os;
    os << std::lround(s * 100) << "%";
    return os.str();
}

metrics::MetricReport score_image(const Prepared& p, const Image& generated, const Image& truth,
                                  const PipelineConfig& cfg, const std::string& label) {
    metrics::MetricReport m;
    m.label = label;
    m.psnr = metrics::psnr(generated, truth);
    m.ssim = metrics::ssim(generated, truth);
    const auto& pose = p.backend->pose_estimator();
    m.heatmap_l2 = metrics::heatmap_l2(pose.estimate(generated, &p.keypoints), pose.estimate(truth, &p.keypoints));
    const int face = label_of(BodyPart::Face);
    if (p.rendered.part_labels.contains(face)) {
        const auto pl = geometry::crop_part(truth, p.rendered.part_labels, face, cfg.face_crop_size, cfg.crop_margin).placement;
        m.id = metrics::id_metric(geometry::crop_with(generated, pl), geometry::crop_with(truth, pl),
                                  p.backend->identity_embedder());
    }
    return m;
}

}  // namespace

metrics::MetricReport score(const EditResult& r, const Image& truth, const std::string& label) {
    PipelineConfig cfg;
    if (r.step2 && r.step2->placement) {
        cfg.face_crop_size = r.step2->placement->out_height;
    }
    return score_image(r.prepared, r.final_image, truth, cfg, label);
}

std::vector<SweepRow> sweep_noise(const PipelineConfig& cfg, const std::vector<double>& strengths) {
    if (strengths.empty()) throw ConfigError("sweep_noise: strength list is empty");
    for (double s : strengths)
        if (!(s > 0.0 && s <= 1.0)) throw ConfigError("sweep_noise: strengths must lie in (0, 1]");
    const Prepared p = prepare(cfg);
    if (!p.ground_truth) throw ConfigError("sweep_noise needs a ground-truth target (toy reference or target_image)");
    std::vector<SweepRow> rows;
    for (double s : strengths) {
        refinement::RefinementConfig c = cfg.stage1;
        c.iterations = 1;
        c.noise_strength = s;
        c.seed = cfg.seed;
        const auto out = in_stage("sweep " + percent_label(s), [&] {
            refinement::FullbodyInputs in{p.rendered.image, p.rendered.invisible_mask, p.prompt_body, p.keypoints,
                                          p.reference,      p.reference_labels,        p.rendered.part_labels};
            return refinement::step1_fullbody(in, c, *p.backend);
        });
        rows.push_back({s, score_image(p, out.output, *p.ground_truth, cfg, percent_label(s))});
    }
    return rows;
}

refinement::RefinementConfig apply_ablation(refinement::RefinementConfig c, const AblationFlags& f) {
    if (!f.opt) c.optimize = false;
    if (!f.iterate) c.iterations = std::min(c.iterations, 1);
    if (!f.reset) c.reinit_period = c.iterations + 1;
    return c;
}

std::string ablation_label(const AblationFlags& f) {
    if (f.opt && f.iterate && f.reset) return "ours";
    std::vector<std::string> off;
    if (!f.opt) off.push_back("opt");
    if (!f.iterate) off.push_back("iterate");
    if (!f.reset) off.push_back("reset");
    std::string s = "w/o";
    for (std::size_t i = 0; i < off.size(); ++i) s += (i ? " & " : " ") + off[i];
    return s;
}

std::vector<AblationFlags> default_ablation_rows() {
    return {{false, false, false}, {true, false, false}, {true, true, false}, {true, true, true}};
}

std::vector<AblationRow> ablate(const PipelineConfig& cfg, const std::vector<AblationFlags>& flags) {
    if (flags.empty()) throw ConfigError("ablate: no rows requested");
    const Prepared p = prepare(cfg);
    std::vector<AblationRow> rows;
    for (const auto& f : flags) {
        PipelineConfig c = cfg;
        c.stage1 = apply_ablation(cfg.stage1, f);
        c.stage2 = apply_ablation(cfg.stage2, f);
        const EditResult r = refine_prepared(p, c, nullptr);
        AblationRow row;
        row.flags = f;
        if (p.ground_truth) row.report = score_image(r.prepared, r.final_image, *p.ground_truth, c, ablation_label(f));
        else row.report.label = ablation_label(f);
        if (r.step1.block) {
            row.step1_best_loss = r.step1.block->records[r.step1.block->best_index - 1].total;
            row.step1_records = static_cast<int>(r.step1.block->records.size());
        }
        if (r.step2 && r.step2->block) row.step2_best_loss = r.step2->block->records[r.step2->block->best_index - 1].total;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<metrics::MetricReport> evaluate(const std::vector<EvaluationPair>& pairs, const diffusion::Backend& backend) {
    if (pairs.empty()) throw ConfigError("evaluate: no image pairs given");
    std::vector<metrics::MetricReport> rows;
    for (const auto& pr : pairs) {
        metrics::MetricReport m;
        m.label = pr.generated.filename().string();
        try {
            const Image g = as_rgb(read_png(pr.generated));
            const Image t = as_rgb(read_png(pr.target));
            m.psnr = metrics::psnr(g, t);
            m.ssim = metrics::ssim(g, t);
            const auto& pose = backend.pose_estimator();
            m.heatmap_l2 = metrics::heatmap_l2(pose.estimate(g, nullptr), pose.estimate(t, nullptr));
            if (!pr.reference.empty()) m.id = metrics::id_metric(g, as_rgb(read_png(pr.reference)), backend.identity_embedder());
        } catch (const Error& e) {
            m = metrics::MetricReport{};
            m.label = pr.generated.filename().string();
            m.error = e.what();
        }
        rows.push_back(std::move(m));
    }
    rows.push_back(metrics::mean_report(rows));
    return rows;
}

}  // namespace diffbody::pipeline
