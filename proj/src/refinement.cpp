#include "diffbody/refinement.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "diffbody/compositor.hpp"
#include "diffbody/error.hpp"
#include "diffbody/mesh.hpp"
#include "diffbody/resample.hpp"

namespace diffbody::refinement {

using diffusion::derive_seed;
using diffusion::SeededNoise;

void RefinementConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("refinement config: " + m); };
    if (!(noise_strength > 0.0 && noise_strength <= 1.0)) fail("noise_strength must be in (0, 1]");
    if (iterations < 0) fail("iterations must be >= 0");
    if (reinit_period < 1) fail("reinit_period must be >= 1");
    if (!(lr_min >= 0.0 && lr_min <= lr_max)) fail("need 0 <= lr_min <= lr_max");
    if (warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        fail("adam betas must be in [0, 1)");
    if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be positive");
    if (fd_directions < 1) fail("fd_directions must be >= 1");
    if (!(fd_step > 0.0)) fail("fd_step must be positive");
    if (!std::isfinite(guidance_scale)) fail("guidance_scale must be finite");
    const auto& w = weights;
    for (double v : {w.aw, w.clip_body, w.id, w.clip_face, w.keypoint, w.shape_edit_face})
        if (!(v >= 0.0)) fail("loss weights must be >= 0");
}

double learning_rate(const RefinementConfig& cfg, int step) {
    const int W = cfg.warmup_steps;
    const int N = cfg.iterations;
    if (step <= W) return cfg.lr_max * static_cast<double>(step) / W;
    if (N <= W) return cfg.lr_min;
    const double f = static_cast<double>(step - W) / (N - W);
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
}

TextEmbedding optimize_embedding(const TextEmbedding& e, const TextEmbedding& g, int step,
                                 const RefinementConfig& cfg, AdamState& st, std::vector<Warning>* warnings) {
    if (g.dim() != e.dim() || !g.finite()) {
        if (warnings)
            warnings->push_back({"gradient_skipped", "iteration " + std::to_string(step) +
                                                         ": non-finite or mis-sized embedding gradient; update skipped"});
        return e;
    }
    const std::size_t D = e.dim();
    if (st.m.size() != D) {
        st.m.assign(D, 0.0);
        st.v.assign(D, 0.0);
        st.updates = 0;
    }
    ++st.updates;
    const double lr = learning_rate(cfg, step);
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, st.updates);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, st.updates);
    TextEmbedding out = e;
    for (std::size_t k = 0; k < D; ++k) {
        st.m[k] = cfg.adam_beta1 * st.m[k] + (1.0 - cfg.adam_beta1) * g.values[k];
        st.v[k] = cfg.adam_beta2 * st.v[k] + (1.0 - cfg.adam_beta2) * g.values[k] * g.values[k];
        out.values[k] -= lr * (st.m[k] / c1) / (std::sqrt(st.v[k] / c2) + cfg.adam_epsilon);
    }
    return out;
}

Mask latent_mask(const Mask& pm, int f) {
    if (f < 1 || pm.height() % f || pm.width() % f) throw InvalidArgument("mask size is not a multiple of the codec factor");
    Mask out(pm.height() / f, pm.width() / f);
    for (int y = 0; y < pm.height(); ++y)
        for (int x = 0; x < pm.width(); ++x)
            if (pm.at(y, x)) out.at(y / f, x / f) = 1;
    return out;
}

RefineOutcome refine_once(const RefineRequest& rq, const RefinementConfig& cfg, const Backend& backend,
                          std::uint64_t seed, const StepObserver* observer) {
    if (!rq.embedding.finite()) throw InvalidArgument("refine_once: embedding is not finite");
    if (rq.mask.height() != rq.input.height() || rq.mask.width() != rq.input.width())
        throw InvalidArgument("refine_once: mask and image sizes differ");
    const auto& codec = backend.codec();
    const LatentMap z0 = codec.encode(rq.input);
    const Mask lm = latent_mask(rq.mask, codec.factor());
    if (lm.height() != z0.height() || lm.width() != z0.width())
        throw BackendError("refine_once: codec latent grid does not match the mask");

    RefineOutcome out;
    out.trace.latent_mask = lm;
    out.trace.image_height = rq.input.height();
    out.trace.image_width = rq.input.width();
    out.trace.cond = diffusion::Conditioning{rq.embedding, rq.keypoints,
                                             diffusion::rasterize_skeleton(rq.keypoints, rq.input.height(), rq.input.width()),
                                             rq.part_layout, rq.stage, cfg.guidance_scale};
    if (!lm.any()) {
        out.final_latent = z0;
        out.output = codec.decode(z0);
        out.warning = Warning{"empty_mask", "refinement mask is empty; input passed through the codec unchanged"};
        return out;
    }

    const auto& schedule = backend.schedule();
    const auto traj = diffusion::q_sample_trajectory(schedule, z0, cfg.noise_strength, derive_seed(seed, 0x7A1ULL));
    SeededNoise noise(derive_seed(seed, 0x5EEDULL));
    out.trace.t_start = traj.t_start();
    LatentMap x = traj.at(traj.t_start());
    for (int t = traj.t_start(); t >= 1; --t) {
        x = diffusion::denoise_step(schedule, backend.denoiser(), x, t, out.trace.cond, noise);
        traj.restore(t - 1, x, lm);
        if (observer && *observer) (*observer)(t - 1, x, traj, lm);
    }
    out.final_latent = x;
    out.output = codec.decode(x);
    // Latent cells straddling the mask edge also cover frozen pixels.
    for (int y = 0; y < rq.input.height(); ++y)
        for (int xx = 0; xx < rq.input.width(); ++xx)
            if (!rq.mask.at(y, xx))
                for (int c = 0; c < rq.input.channels(); ++c) out.output.at(y, xx, c) = rq.input.at(y, xx, c);
    return out;
}

namespace {

[[noreturn]] void rethrow_at(int iteration) {
    const std::string p = "iteration " + std::to_string(iteration) + ": ";
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

TextEmbedding fd_gradient(RefineRequest rq, const RefinementConfig& cfg, const Backend& backend, std::uint64_t seed,
                          const StageLoss& loss) {
    const std::size_t D = rq.embedding.dim();
    const std::size_t K = std::min<std::size_t>(cfg.fd_directions, D);
    SeededNoise rng(derive_seed(seed, 0xFDULL));
    std::vector<std::vector<double>> dirs;
    while (dirs.size() < K) {
        std::vector<double> v(D);
        for (double& x : v) x = rng.normal();
        for (const auto& u : dirs) {
            double d = 0.0;
            for (std::size_t k = 0; k < D; ++k) d += v[k] * u[k];
            for (std::size_t k = 0; k < D; ++k) v[k] -= d * u[k];
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-8) continue;
        for (double& x : v) x /= n;
        dirs.push_back(std::move(v));
    }
    const TextEmbedding base = rq.embedding;
    TextEmbedding g{std::vector<double>(D, 0.0)};
    for (const auto& v : dirs) {
        double l[2];
        for (int s = 0; s < 2; ++s) {
            rq.embedding = base;
            const double h = s == 0 ? cfg.fd_step : -cfg.fd_step;
            for (std::size_t k = 0; k < D; ++k) rq.embedding.values[k] += h * v[k];
            l[s] = loss.evaluate(refine_once(rq, cfg, backend, seed).output, false).breakdown.total;
        }
        const double d = (l[0] - l[1]) / (2.0 * cfg.fd_step);
        for (std::size_t k = 0; k < D; ++k) g.values[k] += d * v[k];
    }
    return g;
}

void add_warning(std::vector<Warning>& ws, const Warning& w) {
    for (const auto& x : ws)
        if (x.code == w.code && x.message == w.message) return;
    ws.push_back(w);
}

}  // namespace

BlockResult run_block(const Image& initial, const Mask& mask, const TextEmbedding& embedding0,
                      const Keypoints& keypoints, const StageLoss& loss, const RefinementConfig& cfg,
                      const Backend& backend, const BlockContext& ctx, const BlockHooks* hooks) {
    cfg.validate();
    if (cfg.iterations < 1) throw InvalidArgument("run_block needs at least one iteration");
    BlockResult r;
    r.embeddings.push_back(embedding0);
    TextEmbedding e = embedding0;
    AdamState adam;
    Image input = initial;
    double best_total = std::numeric_limits<double>::infinity();
    const std::uint64_t stage_salt = ctx.stage == diffusion::Stage::Body ? 1 : 2;

    for (int i = 1; i <= cfg.iterations; ++i) {
        if (hooks && hooks->on_input) hooks->on_input(i, input);
        const std::uint64_t seed = derive_seed(cfg.seed, stage_salt, static_cast<std::uint64_t>(i));
        RefineOutcome outc;
        try {
            RefineRequest rq{input, mask, e, keypoints, ctx.part_layout, ctx.stage};
            outc = refine_once(rq, cfg, backend, seed, hooks ? hooks->step : nullptr);
            if (outc.warning) add_warning(r.warnings, *outc.warning);
            const bool analytic_first = cfg.optimize && cfg.gradient != GradientMode::FiniteDifference;
            const StageLossValue lv = loss.evaluate(outc.output, analytic_first);

            IterationRecord rec;
            rec.index = i;
            rec.components = lv.breakdown.components;
            rec.total = lv.breakdown.total;
            rec.embedding_id = i - 1;
            rec.gradient = "none";
            if (cfg.keep_iterates) rec.output = outc.output;

            if (cfg.optimize) {
                std::optional<TextEmbedding> g;
                if (analytic_first && lv.image_grad) {
                    Raster ig = *lv.image_grad;
                    for (int y = 0; y < ig.height(); ++y)
                        for (int x = 0; x < ig.width(); ++x)
                            if (!mask.at(y, x))
                                for (int c = 0; c < ig.channels(); ++c) ig.at(y, x, c) = 0.0;
                    const auto lat = backend.codec().decode_vjp(outc.final_latent, ig);
                    if (lat) g = backend.embedding_vjp(outc.trace, *lat);
                }
                if (g) {
                    rec.gradient = "analytic";
                } else if (cfg.gradient == GradientMode::Analytic) {
                    throw BackendError("backend does not provide an analytic embedding gradient");
                } else {
                    g = fd_gradient(rq, cfg, backend, seed, loss);
                    rec.gradient = "finite_difference";
                }
                const std::size_t before = r.warnings.size();
                e = optimize_embedding(e, *g, i, cfg, adam, &r.warnings);
                if (r.warnings.size() != before) rec.gradient = "skipped";
                rec.learning_rate = learning_rate(cfg, i);
            }
            r.embeddings.push_back(e);
            r.records.push_back(std::move(rec));
        } catch (const Error&) {
            rethrow_at(i);
        }
        const double total = r.records.back().total;
        if (r.best.empty() || total < best_total || (std::isnan(best_total) && !std::isnan(total))) {
            best_total = total;
            r.best = outc.output;
            r.best_index = i;
        }
        input = (i % cfg.reinit_period == 0) ? initial : outc.output;
    }
    return r;
}

// ---- stage losses ---------------------------------------------------------

FullbodyLoss::FullbodyLoss(const Backend& backend, const Image& rendered, const Keypoints& keypoints,
                           const Image& reference, const LabelMap& reference_labels, const LabelMap& part_labels,
                           const losses::LossWeights& weights)
    : backend_(backend),
      keypoints_(keypoints),
      target_(backend.pose_estimator().estimate(rendered, &keypoints)),
      reference_(reference),
      reference_labels_(reference_labels),
      part_labels_(part_labels),
      weights_(weights) {}

StageLossValue FullbodyLoss::evaluate(const Image& out, bool want_grad) const {
    const auto& pose = backend_.pose_estimator();
    const Heatmap hm = pose.estimate(out, &keypoints_);
    const double aw = losses::aw_loss(hm, target_);
    const auto clip = losses::clip_part_loss(reference_, reference_labels_, out, part_labels_, backend_.part_embedder(),
                                             want_grad);
    StageLossValue v{losses::total_fullbody(aw, clip.value, weights_), std::nullopt};
    if (!want_grad || !clip.grad) return v;
    Heatmap cot(hm.joints());
    const auto g = losses::aw_loss_grad(hm, target_);
    std::copy(g.begin(), g.end(), cot.data().begin());
    const auto pg = pose.vjp(out, &keypoints_, cot);
    if (!pg) return v;
    Raster total(out.height(), out.width(), out.channels());
    auto t = total.data();
    auto a = pg->data();
    auto c = clip.grad->data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = weights_.aw * a[i] + weights_.clip_body * c[i];
    v.image_grad = std::move(total);
    return v;
}

FaceLoss::FaceLoss(const Backend& backend, const Image& reference_face, const Image& rendered_face, bool shape_edit,
                   const losses::LossWeights& weights)
    : backend_(backend),
      reference_face_(reference_face),
      target_landmarks_(backend.face_landmarker().detect(rendered_face)),
      shape_edit_(shape_edit),
      weights_(weights) {}

StageLossValue FaceLoss::evaluate(const Image& out, bool want_grad) const {
    const auto id = losses::id_loss(reference_face_, out, backend_.identity_embedder(), want_grad);
    const auto clip = losses::clip_image_loss(reference_face_, out, backend_.part_embedder(), want_grad);
    const Keypoints lm = backend_.face_landmarker().detect(out);
    const double kp = losses::keypoint_loss(lm, target_landmarks_);
    StageLossValue v{losses::total_face(id.value, clip.value, kp, shape_edit_, weights_), std::nullopt};
    if (!want_grad || !id.grad || !clip.grad) return v;
    const auto kg = losses::keypoint_loss_grad(lm, target_landmarks_);
    const auto lg = backend_.face_landmarker().vjp(out, kg);
    if (!lg) return v;
    const double wid = v.breakdown.components[0].weight;
    const double wclip = v.breakdown.components[1].weight;
    const double wkp = v.breakdown.components[2].weight;
    Raster total(out.height(), out.width(), out.channels());
    auto t = total.data();
    auto a = id.grad->data();
    auto b = clip.grad->data();
    auto c = lg->data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = wid * a[i] + wclip * b[i] + wkp * c[i];
    v.image_grad = std::move(total);
    return v;
}

// ---- stages ---------------------------------------------------------------

StageResult step1_fullbody(const FullbodyInputs& in, const RefinementConfig& cfg, const Backend& backend,
                           const BlockHooks* hooks) {
    cfg.validate();
    StageResult r;
    if (cfg.iterations == 0) {
        r.output = in.rendered;
        r.warnings.push_back({"stage_skipped", "fullbody refinement disabled (0 iterations)"});
        return r;
    }
    const TextEmbedding e0 = backend.text_encoder().encode(in.prompt);
    const FullbodyLoss loss(backend, in.rendered, in.keypoints, in.reference, in.reference_labels, in.part_labels,
                            cfg.weights);
    BlockResult block = run_block(in.rendered, in.invisible_mask, e0, in.keypoints, loss, cfg, backend,
                                  BlockContext{in.part_labels, diffusion::Stage::Body}, hooks);
    r.output = block.best;
    r.warnings = block.warnings;
    r.block = std::move(block);
    return r;
}

FaceStageResult step2_face(const FaceInputs& in, const RefinementConfig& cfg, const Backend& backend,
                           const BlockHooks* hooks) {
    cfg.validate();
    FaceStageResult r;
    const int face = geometry::label_of(geometry::BodyPart::Face);
    if (!in.part_labels.contains(face)) {
        r.output = in.step1_output;
        r.skipped = true;
        r.warnings.push_back({"face_missing", "no face pixels in the part label map; facial refinement skipped"});
        return r;
    }
    const auto crop = geometry::crop_part(in.step1_output, in.part_labels, face, in.crop_size, in.crop_margin);
    r.placement = crop.placement;
    r.crop_input = crop.image;
    r.interior = geometry::face_border_mask(in.crop_size, in.crop_size);
    if (cfg.iterations == 0) {
        r.crop_refined = crop.image;
        r.warnings.push_back({"stage_skipped", "facial refinement disabled (0 iterations)"});
    } else {
        const Image rendered_face = geometry::crop_with(in.rendered, crop.placement);
        const Image ref_face = (in.reference_face.height() == in.crop_size && in.reference_face.width() == in.crop_size)
                                   ? in.reference_face
                                   : resize_bilinear(in.reference_face, in.crop_size, in.crop_size);
        const TextEmbedding e0 = backend.text_encoder().encode(in.prompt);
        const FaceLoss loss(backend, ref_face, rendered_face, cfg.shape_edit, cfg.weights);
        BlockResult block = run_block(crop.image, r.interior, e0, Keypoints{}, loss, cfg, backend,
                                      BlockContext{geometry::crop_labels(in.part_labels, crop.placement),
                                                   diffusion::Stage::Face},
                                      hooks);
        r.crop_refined = block.best;
        r.warnings = block.warnings;
        r.block = std::move(block);
    }
    r.output = compositor::paste_face(in.step1_output, r.crop_refined, crop.placement, r.interior);
    return r;
}

// ---- reports ---------------------------------------------------------------

namespace {

const char* mode_name(GradientMode m) {
    switch (m) {
        case GradientMode::Analytic: return "analytic";
        case GradientMode::FiniteDifference: return "finite_difference";
        default: return "auto";
    }
}

}  // namespace

nlohmann::json to_json(const RefinementConfig& c) {
    return {
        {"noise_strength", c.noise_strength},
        {"iterations", c.iterations},
        {"reinit_period", c.reinit_period},
        {"lr_min", c.lr_min},
        {"lr_max", c.lr_max},
        {"warmup_steps", c.warmup_steps},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"adam_epsilon", c.adam_epsilon},
        {"optimize", c.optimize},
        {"gradient", mode_name(c.gradient)},
        {"fd_directions", c.fd_directions},
        {"fd_step", c.fd_step},
        {"guidance_scale", c.guidance_scale},
        {"weights",
         {{"aw", c.weights.aw},
          {"clip_body", c.weights.clip_body},
          {"id", c.weights.id},
          {"clip_face", c.weights.clip_face},
          {"keypoint", c.weights.keypoint},
          {"shape_edit_face", c.weights.shape_edit_face}}},
        {"shape_edit", c.shape_edit},
        {"seed", c.seed},
        {"keep_iterates", c.keep_iterates},
    };
}

RefinementConfig config_from_json(const nlohmann::json& j, RefinementConfig c) {
    if (!j.is_object()) throw ConfigError("refinement config must be an object");
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "noise_strength") c.noise_strength = v.get<double>();
            else if (k == "iterations") c.iterations = v.get<int>();
            else if (k == "reinit_period") c.reinit_period = v.get<int>();
            else if (k == "lr_min") c.lr_min = v.get<double>();
            else if (k == "lr_max") c.lr_max = v.get<double>();
            else if (k == "warmup_steps") c.warmup_steps = v.get<int>();
            else if (k == "adam_beta1") c.adam_beta1 = v.get<double>();
            else if (k == "adam_beta2") c.adam_beta2 = v.get<double>();
            else if (k == "adam_epsilon") c.adam_epsilon = v.get<double>();
            else if (k == "optimize") c.optimize = v.get<bool>();
            else if (k == "gradient") {
                const auto s = v.get<std::string>();
                if (s == "auto") c.gradient = GradientMode::Auto;
                else if (s == "analytic") c.gradient = GradientMode::Analytic;
                else if (s == "finite_difference") c.gradient = GradientMode::FiniteDifference;
                else throw ConfigError("refinement config: unknown gradient mode \"" + s + "\"");
            } else if (k == "fd_directions") c.fd_directions = v.get<int>();
            else if (k == "fd_step") c.fd_step = v.get<double>();
            else if (k == "guidance_scale") c.guidance_scale = v.get<double>();
            else if (k == "shape_edit") c.shape_edit = v.get<bool>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "keep_iterates") c.keep_iterates = v.get<bool>();
            else if (k == "weights") {
                for (const auto& [wk, wv] : v.items()) {
                    const double x = wv.get<double>();
                    if (wk == "aw") c.weights.aw = x;
                    else if (wk == "clip_body") c.weights.clip_body = x;
                    else if (wk == "id") c.weights.id = x;
                    else if (wk == "clip_face") c.weights.clip_face = x;
                    else if (wk == "keypoint") c.weights.keypoint = x;
                    else if (wk == "shape_edit_face") c.weights.shape_edit_face = x;
                    else throw ConfigError("refinement config: unknown weight \"" + wk + "\"");
                }
            } else {
                throw ConfigError("refinement config: unknown key \"" + k + "\"");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("refinement config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const BlockResult& b) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : b.records) {
        nlohmann::json comps = nlohmann::json::object();
        for (const auto& c : r.components) comps[c.name] = {{"value", c.value}, {"weight", c.weight}};
        recs.push_back({{"index", r.index},
                        {"components", comps},
                        {"total", r.total},
                        {"embedding_id", r.embedding_id},
                        {"learning_rate", r.learning_rate},
                        {"gradient", r.gradient}});
    }
    nlohmann::json warns = nlohmann::json::array();
    for (const auto& w : b.warnings) warns.push_back({{"code", w.code}, {"message", w.message}});
    return {{"best_index", b.best_index}, {"records", recs}, {"warnings", warns}};
}

}  // namespace diffbody::refinement
