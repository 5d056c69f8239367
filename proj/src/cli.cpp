#include "isoguide/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "isoguide/errors.hpp"
#include "isoguide/layout.hpp"
#include "isoguide/tensor_io.hpp"
#include "isoguide/toyworld.hpp"

namespace isoguide::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string join_path(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

// Typed, path-aware accessors over a JSON object with a closed key set.
class Node {
public:
    Node(const json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(label() + ": expected an object");
        for (const auto& [k, v] : j_.items()) {
            if (!allowed.count(k)) throw ValidationError(join_path(path_, k) + ": unknown key");
        }
    }

    bool has(const std::string& k) const { return j_.contains(k) && !j_.at(k).is_null(); }
    const json& raw(const std::string& k) const { return j_.at(k); }
    std::string field(const std::string& k) const { return join_path(path_, k); }

    Node child(const std::string& k, std::set<std::string> allowed) const {
        return Node(j_.at(k), field(k), std::move(allowed));
    }

    bool boolean(const std::string& k) const {
        if (!j_.at(k).is_boolean()) throw ValidationError(field(k) + ": expected a boolean");
        return j_.at(k).get<bool>();
    }
    std::int64_t integer(const std::string& k) const {
        if (!j_.at(k).is_number_integer()) throw ValidationError(field(k) + ": expected an integer");
        return j_.at(k).get<std::int64_t>();
    }
    double number(const std::string& k) const {
        if (!j_.at(k).is_number()) throw ValidationError(field(k) + ": expected a number");
        return j_.at(k).get<double>();
    }
    std::string string(const std::string& k) const {
        if (!j_.at(k).is_string()) throw ValidationError(field(k) + ": expected a string");
        return j_.at(k).get<std::string>();
    }
    std::vector<std::string> strings(const std::string& k) const {
        const json& a = j_.at(k);
        if (!a.is_array()) throw ValidationError(field(k) + ": expected an array of strings");
        std::vector<std::string> out;
        for (const auto& v : a) {
            if (!v.is_string()) throw ValidationError(field(k) + ": expected an array of strings");
            out.push_back(v.get<std::string>());
        }
        return out;
    }
    std::vector<double> numbers(const std::string& k) const {
        const json& a = j_.at(k);
        if (!a.is_array()) throw ValidationError(field(k) + ": expected an array of numbers");
        std::vector<double> out;
        for (const auto& v : a) {
            if (!v.is_number()) throw ValidationError(field(k) + ": expected an array of numbers");
            out.push_back(v.get<double>());
        }
        return out;
    }

    // Wraps parse errors of enum-like strings with the field path.
    template <class F>
    auto parsed(const std::string& k, F&& parse) const {
        const std::string s = string(k);
        try {
            return parse(s);
        } catch (const ValidationError& e) {
            throw ValidationError(field(k) + ": " + e.what());
        }
    }

    const json& value() const { return j_; }

private:
    std::string label() const { return path_.empty() ? "config" : path_; }

    const json& j_;
    std::string path_;
};

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

void require_file(const fs::path& p, const std::string& field) {
    if (!fs::is_regular_file(p)) throw ValidationError(field + ": file not found: " + p.string());
}

// Validates a denoiser spec and rewrites its relative paths to absolute ones.
json parse_denoiser(const Node& parent, const std::string& key, const fs::path& base) {
    const Node n = parent.child(key, {"kind", "templates", "mixtures", "endpoint", "timeout_ms"});
    const std::string kind = n.has("kind") ? n.string("kind") : std::string();
    json out = {{"kind", kind}};
    if (kind == "template") {
        if (!n.has("templates")) throw ValidationError(n.field("templates") + ": required for template denoisers");
        const json& t = n.raw("templates");
        if (!t.is_object() || t.empty()) throw ValidationError(n.field("templates") + ": expected a non-empty object");
        for (const auto& [id, v] : t.items()) {
            const std::string f = n.field("templates") + "." + id;
            if (!v.is_string()) throw ValidationError(f + ": expected a file path");
            const fs::path p = resolve(base, v.get<std::string>());
            require_file(p, f);
            out["templates"][id] = p.string();
        }
    } else if (kind == "gm") {
        if (!n.has("mixtures")) throw ValidationError(n.field("mixtures") + ": required for gm denoisers");
        const json& m = n.raw("mixtures");
        if (!m.is_object() || m.empty()) throw ValidationError(n.field("mixtures") + ": expected a non-empty object");
        for (const auto& [id, v] : m.items()) {
            const Node mix(v, n.field("mixtures") + "." + id, {"weights", "means", "variances"});
            for (const char* req : {"weights", "means", "variances"}) {
                if (!mix.has(req)) throw ValidationError(mix.field(req) + ": required");
            }
            json entry = {{"weights", mix.numbers("weights")}, {"variances", mix.numbers("variances")}};
            const json& means = mix.raw("means");
            if (!means.is_array()) throw ValidationError(mix.field("means") + ": expected an array");
            entry["means"] = json::array();
            for (const auto& mu : means) {
                if (mu.is_number()) {
                    entry["means"].push_back(mu);
                } else if (mu.is_string()) {
                    const fs::path p = resolve(base, mu.get<std::string>());
                    require_file(p, mix.field("means"));
                    entry["means"].push_back(p.string());
                } else {
                    throw ValidationError(mix.field("means") + ": entries must be numbers or file paths");
                }
            }
            out["mixtures"][id] = entry;
        }
    } else if (kind == "remote") {
        if (n.has("endpoint")) out["endpoint"] = n.string("endpoint");
        if (n.has("timeout_ms")) {
            const auto ms = n.integer("timeout_ms");
            if (ms <= 0) throw ValidationError(n.field("timeout_ms") + ": must be positive");
            out["timeout_ms"] = ms;
        }
    } else {
        throw ValidationError(n.field("kind") + ": expected one of template, gm, remote");
    }
    return out;
}

Shape parse_shape(const Node& n) {
    const auto dims = n.numbers("shape");
    if (dims.size() != 3) throw ValidationError(n.field("shape") + ": expected [channels, height, width]");
    Shape s{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};
    if (!s.valid() || dims[0] != s.channels || dims[1] != s.height || dims[2] != s.width) {
        throw ValidationError(n.field("shape") + ": dims must be positive integers");
    }
    return s;
}

}  // namespace

RunConfig parse_config(const json& doc, const fs::path& base) {
    const Node top(doc, "",
                   {"schema_version", "seed", "sampler", "concurrent", "shape", "schedule", "guidance", "prompts",
                    "denoiser", "refiner", "revision", "output", "sidecar", "toy_eval", "detect"});
    if (!top.has("schema_version")) throw ValidationError("schema_version: required");
    if (top.integer("schema_version") != kSchemaVersion) {
        throw ValidationError("schema_version: unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
    }

    RunConfig c;
    if (top.has("seed")) {
        const auto s = top.integer("seed");
        if (s < 0) throw ValidationError("seed: must be non-negative");
        c.seed = static_cast<std::uint64_t>(s);
    }
    if (top.has("sampler")) c.sampler = top.parsed("sampler", [](const std::string& s) { return parse_sampler_mode(s); });
    if (top.has("concurrent")) c.concurrent = top.boolean("concurrent");
    if (top.has("shape")) c.shape = parse_shape(top);
    if (top.has("sidecar")) c.sidecar = top.string("sidecar");

    if (top.has("schedule")) {
        const Node n = top.child("schedule", {"max_step", "steps", "kind", "refiner_fraction"});
        if (n.has("max_step")) c.max_step = static_cast<int>(n.integer("max_step"));
        if (n.has("steps")) c.steps = static_cast<int>(n.integer("steps"));
        if (n.has("kind")) c.schedule_kind = n.parsed("kind", [](const std::string& s) { return parse_schedule_kind(s); });
        if (n.has("refiner_fraction")) c.refiner_fraction = n.number("refiner_fraction");
        if (c.max_step < 1) throw ValidationError("schedule.max_step: must be at least 1");
        if (c.steps < 1 || c.steps > c.max_step) throw ValidationError("schedule.steps: must be in [1, max_step]");
        if (!(c.refiner_fraction >= 0.0 && c.refiner_fraction <= 1.0)) {
            throw ValidationError("schedule.refiner_fraction: must be in [0, 1]");
        }
    }
    if (top.has("guidance")) {
        const Node n = top.child("guidance", {"mode", "scale", "weights"});
        if (n.has("mode")) c.guidance_kind = n.parsed("mode", [](const std::string& s) { return parse_guidance_kind(s); });
        if (n.has("scale")) c.guidance_scale = n.number("scale");
        if (n.has("weights")) c.attachment_weights = n.numbers("weights");
    }
    if (top.has("prompts")) {
        const Node n = top.child("prompts", {"unconditional", "list", "joint"});
        if (n.has("unconditional")) c.unconditional = n.string("unconditional");
        if (n.has("list")) c.prompt_list = n.string("list");
        if (n.has("joint")) c.joint_prompt = n.string("joint");
    }
    if (top.has("denoiser")) c.denoiser = parse_denoiser(top, "denoiser", base);
    if (top.has("refiner")) c.refiner = parse_denoiser(top, "refiner", base);

    if (top.has("revision")) {
        const Node n = top.child("revision", {"t_lay", "strategy", "per_branch_noise", "conf_threshold",
                                              "expected_labels", "masks", "bbox_masks", "assign", "detections"});
        if (n.has("t_lay")) c.t_lay = static_cast<int>(n.integer("t_lay"));
        if (n.has("strategy")) c.strategy = n.parsed("strategy", [](const std::string& s) { return parse_strategy(s); });
        if (n.has("per_branch_noise")) c.per_branch_noise = n.boolean("per_branch_noise");
        if (n.has("conf_threshold")) c.conf_threshold = n.number("conf_threshold");
        if (n.has("expected_labels")) c.expected_labels = n.strings("expected_labels");
        if (n.has("masks")) {
            for (const auto& m : n.strings("masks")) {
                const fs::path p = resolve(base, m);
                require_file(p, n.field("masks"));
                c.masks.push_back(p);
            }
        }
        if (n.has("bbox_masks")) c.bbox_masks = n.boolean("bbox_masks");
        if (n.has("assign")) {
            c.assign = n.string("assign");
            n.parsed("assign", [](const std::string& s) { return parse_assignment(s); });
        }
        if (n.has("detections")) {
            const fs::path p = resolve(base, n.string("detections"));
            require_file(p, n.field("detections"));
            c.detections = p;
        }
    }
    if (top.has("output")) {
        const Node n = top.child("output", {"dir", "timings"});
        if (n.has("dir")) c.out_dir = resolve(base, n.string("dir"));
        if (n.has("timings")) c.timings = n.boolean("timings");
    }
    if (top.has("toy_eval")) {
        const Node n = top.child("toy_eval", {"suite", "report"});
        if (n.has("suite")) {
            c.suite = n.string("suite");
            n.parsed("suite", [](const std::string& s) { return toy::parse_suite(s); });
        }
        if (n.has("report")) c.report = resolve(base, n.string("report"));
    }
    if (top.has("detect")) {
        const Node n = top.child("detect", {"image"});
        if (n.has("image")) {
            const fs::path p = resolve(base, n.string("image"));
            require_file(p, n.field("image"));
            c.image = p;
        }
    }
    return c;
}

RunConfig load_config(const fs::path& file) {
    if (!fs::is_regular_file(file)) throw ValidationError("--config: file not found: " + file.string());
    std::ifstream in(file);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("--config: invalid JSON: " + std::string(e.what()));
    }
    return parse_config(doc, file.parent_path().empty() ? fs::path(".") : file.parent_path());
}

namespace {

struct Built {
    DiffusionSetup setup;
    Shape shape;
};

std::optional<std::string> default_sidecar(const RunConfig& c) {
    if (c.sidecar) return c.sidecar;
    if (const char* env = std::getenv(kSidecarEnv); env && *env) return std::string(env);
    return std::nullopt;
}

DenoiserPtr build_denoiser(const json& spec, const NoiseSchedule& sched, const RunConfig& c, const char* field,
                           std::optional<Shape>& shape) {
    const std::string kind = spec.at("kind");
    if (kind == "template") {
        std::map<std::string, Latent> templates;
        for (const auto& [id, p] : spec.at("templates").items()) {
            templates[id] = io::read_tensor(p.get<std::string>());
            if (!shape) shape = templates[id].shape();
        }
        return make_template_denoiser(std::move(templates), sched);
    }
    if (kind == "gm") {
        std::map<std::string, GaussianMixture> mixtures;
        for (const auto& [id, m] : spec.at("mixtures").items()) {
            GaussianMixture gm;
            gm.weights = m.at("weights").get<std::vector<double>>();
            gm.variances = m.at("variances").get<std::vector<double>>();
            for (const auto& mu : m.at("means")) {
                if (mu.is_string()) {
                    gm.means.push_back(io::read_tensor(mu.get<std::string>()));
                    if (!shape) shape = gm.means.back().shape();
                } else {
                    if (!shape) {
                        throw ValidationError(std::string(field) + ".mixtures." + id +
                                              ".means: scalar means need a top-level shape");
                    }
                    gm.means.emplace_back(*shape, mu.get<float>());
                }
            }
            mixtures[id] = std::move(gm);
        }
        return make_gm_denoiser(std::move(mixtures), sched);
    }
    std::optional<std::string> endpoint =
        spec.contains("endpoint") ? std::optional<std::string>(spec.at("endpoint").get<std::string>()) : default_sidecar(c);
    if (!endpoint) {
        throw ValidationError(std::string(field) + ".endpoint: required (or set sidecar / " + kSidecarEnv + ")");
    }
    const auto ms = spec.value("timeout_ms", std::int64_t{30000});
    return make_remote_denoiser(*endpoint, std::chrono::milliseconds(ms));
}

Built build_setup(const RunConfig& c) {
    if (c.denoiser.is_null()) throw ValidationError("denoiser: required");
    Built b;
    b.setup.schedule = make_noise_schedule(c.max_step, c.schedule_kind);
    if (c.t_lay < 0 || c.t_lay > c.max_step) throw ValidationError("revision.t_lay: must be in [0, max_step]");
    b.setup.steps = make_step_plan(c.max_step, c.steps, c.t_lay, c.refiner.is_null() ? 0.0 : c.refiner_fraction);
    std::optional<Shape> shape = c.shape;
    b.setup.denoisers.base = build_denoiser(c.denoiser, b.setup.schedule, c, "denoiser", shape);
    if (!c.refiner.is_null()) b.setup.denoisers.refiner = build_denoiser(c.refiner, b.setup.schedule, c, "refiner", shape);
    b.setup.denoisers.switch_index = b.setup.steps.refiner_index;
    if (!shape) throw ValidationError("shape: required for remote denoisers");
    b.shape = *shape;
    return b;
}

SamplingOptions sampling_options(const RunConfig& c, const Shape& shape, GuidanceKind fallback) {
    SamplingOptions o;
    o.shape = shape;
    o.seed = c.seed;
    o.sampler = c.sampler;
    o.concurrent = c.concurrent;
    o.guidance = {c.guidance_kind.value_or(fallback), c.guidance_scale, c.attachment_weights};
    return o;
}

json schedule_json(const RunConfig& c) {
    return {{"max_step", c.max_step},
            {"steps", c.steps},
            {"kind", std::string(to_string(c.schedule_kind))},
            {"sampler", std::string(to_string(c.sampler))}};
}

// Tracks files written by a command so a failure leaves nothing behind.
class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}
    ~OutputSet() {
        if (committed_) return;
        std::error_code ec;
        for (const auto& p : written_) {
            if (fs::is_regular_file(p, ec)) fs::remove(p, ec);
        }
        if (created_dir_) fs::remove(dir_, ec);
    }

    fs::path path(const std::string& name) {
        if (!fs::exists(dir_)) {
            fs::create_directories(dir_);
            created_dir_ = true;
        }
        written_.push_back(dir_ / name);
        return written_.back();
    }
    void tensor(const std::string& name, const Latent& t) { io::write_tensor(path(name), t); }
    void image(const std::string& name, const Latent& t) {
        if (t.shape().channels == 1 || t.shape().channels == 3) io::write_ppm(path(name), t);
    }
    void text(const std::string& name, const std::string& s) {
        std::ofstream f(path(name), std::ios::binary);
        f << s;
        if (!f) throw Error("cannot write " + (dir_ / name).string());
    }
    void commit() { committed_ = true; }

private:
    fs::path dir_;
    std::vector<fs::path> written_;
    bool created_dir_ = false;
    bool committed_ = false;
};

int cmd_attach(const RunConfig& c, std::ostream& out) {
    if (c.prompt_list.empty()) throw ValidationError("prompts.list: required");
    const PromptPlan plan = parse_attachment_prompt_list(c.prompt_list, c.unconditional);
    plan.validate_attachment_plan();
    const Built b = build_setup(c);
    const SamplingOptions opts = sampling_options(c, b.shape, GuidanceKind::isolated_attach);
    opts.guidance.validate(plan.attachments.size());

    const auto t0 = std::chrono::steady_clock::now();
    const Latent result = sample_guided(plan, b.setup, opts);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    json report = {{"command", "attach"},
                   {"seed", c.seed},
                   {"guidance", {{"mode", std::string(to_string(opts.guidance.kind))}, {"scale", opts.guidance.scale}}},
                   {"schedule", schedule_json(c)},
                   {"shape", {b.shape.channels, b.shape.height, b.shape.width}},
                   {"base", plan.base->text},
                   {"attachments", json::array()}};
    for (const auto& a : plan.attachments) report["attachments"].push_back(a.text);
    if (c.timings) report["timings_ms"] = {{"total_ms", ms}};

    OutputSet files(c.out_dir);
    files.tensor("latent.iltd", result);
    files.image("image.ppm", result);
    files.text("report.json", report.dump(2) + "\n");
    files.commit();
    out << "wrote " << (c.out_dir / "latent.iltd").string() << "\n";
    return kExitOk;
}

int cmd_revise(const RunConfig& c, std::ostream& out) {
    if (c.prompt_list.empty()) throw ValidationError("prompts.list: required");
    if (c.joint_prompt.empty()) throw ValidationError("prompts.joint: required");
    const Built b = build_setup(c);

    RevisionRequest req;
    req.plan = parse_subject_prompt_list(c.prompt_list, c.joint_prompt, c.unconditional);
    req.plan.validate_subject_plan();
    for (const auto& s : req.plan.subjects) {
        if (!c.expected_labels) req.policy.expected_labels.push_back(s.prompt.text);
    }
    if (c.expected_labels) req.policy.expected_labels = *c.expected_labels;
    req.policy.confidence_threshold = c.conf_threshold;
    try {
        req.policy.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("revision: ") + e.what());
    }
    for (const auto& m : c.masks) req.sources.file_masks.push_back(io::read_mask(m));
    req.sources.sidecar = default_sidecar(c);
    req.sources.allow_bbox = c.bbox_masks;
    if (!c.assign.empty()) req.sources.assignment = parse_assignment(c.assign);
    req.revision = {c.strategy, c.per_branch_noise};
    req.record_timings = c.timings;
    if (c.detections) {
        const auto bytes = io::read_file(*c.detections);
        req.detections = parse_detect_response(std::string(bytes.begin(), bytes.end()), b.shape.height, b.shape.width);
    }

    const SamplingOptions opts = sampling_options(c, b.shape, GuidanceKind::cfg);
    opts.guidance.validate(0);
    RevisionOutcome res = end_to_end_revision(req, b.setup, opts);
    res.report["command"] = "revise";
    res.report["schedule"] = schedule_json(c);
    res.report["t_lay"] = c.t_lay;

    OutputSet files(c.out_dir);
    files.tensor("latent.iltd", res.output);
    files.image("image.ppm", res.output);
    files.tensor("original.iltd", res.original);
    files.image("original.ppm", res.original);
    files.text("report.json", res.report.dump(2) + "\n");
    files.commit();
    out << (res.revised ? "revised" : "unchanged") << ": wrote " << (c.out_dir / "latent.iltd").string() << "\n";
    return kExitOk;
}

int cmd_toy_eval(const RunConfig& c, std::ostream& out) {
    const toy::SuiteReport rep = toy::run_suite(toy::parse_suite(c.suite), c.concurrent);
    json doc = {{"suite", c.suite},
                {"pass", rep.pass},
                {"rows", rep.rows},
                {"thresholds",
                 {{"convergence_rmse", toy::kConvergenceRmse},
                  {"bleeding_rmse", toy::kBleedingRmse},
                  {"energy_distance", toy::kEnergyDistanceGate},
                  {"mean_relative", toy::kMeanRelativeGate}}}};
    for (const auto& r : rep.rows) {
        out << (r.at("pass").get<bool>() ? "PASS " : "FAIL ") << r.at("suite").get<std::string>() << " "
            << r.at("scene").get<std::string>() << " " << r.at("mode").get<std::string>();
        if (r.at("strategy").is_string()) out << " strategy=" << r.at("strategy").get<std::string>();
        out << " lambda=" << r.at("lambda").get<double>() << "\n";
    }
    if (c.report) {
        OutputSet files(c.report->parent_path().empty() ? fs::path(".") : c.report->parent_path());
        files.text(c.report->filename().string(), doc.dump(2) + "\n");
        files.commit();
    }
    out << (rep.pass ? "suite passed" : "suite failed") << "\n";
    return rep.pass ? kExitOk : kExitAcceptance;
}

int cmd_detect(const RunConfig& c, std::ostream& out) {
    if (!c.image) throw ValidationError("detect.image: required");
    const auto endpoint = default_sidecar(c);
    if (!endpoint) throw ValidationError(std::string("sidecar: required (or set ") + kSidecarEnv + ")");
    const Latent image = io::read_ppm(*c.image);
    const SidecarClient client(*endpoint);
    json doc = {{"detections", json::array()}};
    for (const auto& d : client.detect(image)) {
        doc["detections"].push_back(
            {{"label", d.label}, {"confidence", d.confidence}, {"bbox", {d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1}}});
    }
    out << doc.dump(2) << "\n";
    return kExitOk;
}

// Writes a self-contained toy scene (templates, config, masks) for demos.
int cmd_make_toy(const std::string& kind, std::uint64_t seed, const fs::path& dir, std::ostream& out) {
    OutputSet files(dir);
    json cfg = {{"schema_version", kSchemaVersion}, {"seed", seed}, {"output", {{"dir", "out"}}}};
    json templates;
    if (kind == "attach") {
        const toy::AttachScene sc = toy::build_attach_scene(toy::generate_attach_spec(seed, 2));
        for (const auto& [id, t] : sc.scene.templates) {
            files.tensor(id + ".iltd", t);
            templates[id] = id + ".iltd";
        }
        files.image("target.ppm", sc.target);
        cfg["prompts"] = {{"list", "subject, first attachment, second attachment"}};
        cfg["guidance"] = {{"mode", "isolated-attach"}, {"scale", 1.0}};
    } else if (kind == "subjects") {
        const toy::SubjectScene sc = toy::build_subject_scene(toy::generate_subject_spec(seed, 2));
        for (const auto& [id, t] : sc.scene.templates) {
            files.tensor(id + ".iltd", t);
            templates[id] = id + ".iltd";
        }
        json masks = json::array();
        json dets = {{"detections", json::array()}};
        for (std::size_t i = 0; i < sc.layout.size(); ++i) {
            const std::string name = "mask" + std::to_string(i + 1) + ".pgm";
            io::write_mask(files.path(name), sc.layout.subjects[i].mask);
            masks.push_back(name);
        }
        // The detector saw a single merged subject, so the bleed check fails.
        dets["detections"].push_back({{"label", "first square"}, {"confidence", 0.9}, {"bbox", {0, 0, 16, 16}}});
        files.text("detections.json", dets.dump(2) + "\n");
        cfg["prompts"] = {{"list", "first square, second square"}, {"joint", "two squares"}};
        cfg["guidance"] = {{"mode", "cfg"}, {"scale", 1.0}};
        cfg["revision"] = {{"masks", masks}, {"detections", "detections.json"}, {"strategy", "A"}, {"t_lay", 750}};
    } else {
        throw ValidationError("--kind: expected attach or subjects");
    }
    cfg["denoiser"] = {{"kind", "template"}, {"templates", templates}};
    files.text("config.json", cfg.dump(2) + "\n");
    files.commit();
    out << "wrote " << (dir / "config.json").string() << "\n";
    return kExitOk;
}

int classify(const std::exception& e) {
    if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
        dynamic_cast<const FormatError*>(&e) || dynamic_cast<const ConditionError*>(&e)) {
        return kExitValidation;
    }
    return kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"isolated diffusion guidance engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::int64_t> seed;
    std::string out_dir, masks, sidecar, assign, strategy, detections, suite, report, image, kind = "attach";
    std::optional<double> conf;
    std::optional<int> t_lay;
    bool timings = false, bbox = false, concurrent = false;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_flag("--concurrent", concurrent, "evaluate denoiser calls concurrently");
    };
    auto* attach = app.add_subcommand("attach", "multi-attachment isolated guidance");
    common(attach);
    attach->add_option("--seed", seed, "master seed");
    attach->add_option("--out", out_dir, "output directory");
    attach->add_flag("--timings", timings, "record wall-clock timings in the report");

    auto* revise = app.add_subcommand("revise", "detect bleeding and revise subjects");
    common(revise);
    revise->add_option("--seed", seed, "master seed");
    revise->add_option("--out", out_dir, "output directory");
    revise->add_option("--masks", masks, "comma-separated PGM masks, one per subject");
    revise->add_option("--sidecar", sidecar, "perception sidecar endpoint");
    revise->add_option("--conf-threshold", conf, "detection confidence threshold");
    revise->add_option("--assign", assign, "subject:mask overrides, e.g. 0:1,1:0");
    revise->add_option("--strategy", strategy, "branch noise strategy A, B or C");
    revise->add_option("--t-lay", t_lay, "layout timestep");
    revise->add_option("--detections", detections, "detections JSON (detect response format)");
    revise->add_flag("--bbox-masks", bbox, "rasterize detection boxes when no masks are given");
    revise->add_flag("--timings", timings, "record wall-clock timings in the report");

    auto* toy_eval = app.add_subcommand("toy-eval", "run the toy acceptance suites");
    common(toy_eval);
    toy_eval->add_option("--suite", suite, "attach|subjects|ablations|baselines|distribution|all");
    toy_eval->add_option("--report", report, "JSON report path");

    auto* detect = app.add_subcommand("detect", "ask the sidecar for detections on a PPM image");
    common(detect);
    detect->add_option("--image", image, "PPM image");
    detect->add_option("--sidecar", sidecar, "perception sidecar endpoint");

    auto* make_toy = app.add_subcommand("make-toy", "write a toy scene with templates and a config");
    make_toy->add_option("--kind", kind, "attach or subjects");
    make_toy->add_option("--seed", seed, "scene seed");
    make_toy->add_option("--out", out_dir, "output directory")->required();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (make_toy->parsed()) {
            if (seed && *seed < 0) throw ValidationError("--seed: must be non-negative");
            return cmd_make_toy(kind, seed ? static_cast<std::uint64_t>(*seed) : 1, out_dir, out);
        }
        RunConfig c;
        if (!config_path.empty()) {
            c = load_config(config_path);
        } else if (!toy_eval->parsed() && !detect->parsed()) {
            throw ValidationError("--config: required");
        }
        if (seed) {
            if (*seed < 0) throw ValidationError("--seed: must be non-negative");
            c.seed = static_cast<std::uint64_t>(*seed);
        }
        if (!out_dir.empty()) c.out_dir = out_dir;
        if (timings) c.timings = true;
        if (concurrent) c.concurrent = true;
        if (!masks.empty()) {
            c.masks.clear();
            std::stringstream ss(masks);
            for (std::string m; std::getline(ss, m, ',');) {
                if (m.empty()) continue;
                require_file(m, "--masks");
                c.masks.emplace_back(m);
            }
        }
        if (!sidecar.empty()) c.sidecar = sidecar;
        if (conf) c.conf_threshold = *conf;
        if (!assign.empty()) {
            parse_assignment(assign);
            c.assign = assign;
        }
        if (!strategy.empty()) c.strategy = parse_strategy(strategy);
        if (t_lay) c.t_lay = *t_lay;
        if (!detections.empty()) {
            require_file(detections, "--detections");
            c.detections = detections;
        }
        if (bbox) c.bbox_masks = true;
        if (!suite.empty()) {
            toy::parse_suite(suite);
            c.suite = suite;
        }
        if (!report.empty()) c.report = report;
        if (!image.empty()) {
            require_file(image, "--image");
            c.image = image;
        }

        if (attach->parsed()) return cmd_attach(c, out);
        if (revise->parsed()) return cmd_revise(c, out);
        if (toy_eval->parsed()) return cmd_toy_eval(c, out);
        return cmd_detect(c, out);
    } catch (const TransportError& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return classify(e);
    }
}

}  // namespace isoguide::cli
