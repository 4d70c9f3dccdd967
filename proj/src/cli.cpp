// SPDX-License-Identifier: Apache-2.0
#include "osketch/cli.hpp"

#include "osketch/dataset.hpp"
#include "osketch/errors.hpp"
#include "osketch/image_io.hpp"
#include "osketch/instruction.hpp"
#include "osketch/rng.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace osketch::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_json(const fs::path& path, const json& j) {
    const std::string text = j.dump(2) + "\n";
    write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

json read_json_if_exists(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return nullptr;
    try {
        return json::parse(in);
    } catch (const json::exception&) {
        return nullptr;
    }
}

json seeds_of(const RunConfig& c) {
    return json{{"backend", c.backend.seed}, {"invert", c.optimize.seed}, {"sampler", c.sampler.seed}};
}

Image load_for_backend(const fs::path& path, const BackendDescriptor& desc) {
    return resize_image(load_image(path), desc.image_height, desc.image_width);
}

DatasetManifest load_checked_manifest(const RunConfig& config, bool need_train_id) {
    DatasetManifest manifest = load_manifest(config.dataset_root);
    if (need_train_id && !manifest.contains(config.train_id)) {
        throw ValidationError("dataset.train_id", "'" + config.train_id + "' is not in the manifest");
    }
    return manifest;
}

std::uint64_t photo_seed(std::uint64_t sampler_seed, const std::string& id) {
    return derive_seed(sampler_seed, "photo:" + id);
}

}  // namespace

RunConfig resolve_config(const fs::path& config_path, const Overrides& o) {
    RunConfig c = load_run_config(config_path);
    if (o.train_id) c.train_id = *o.train_id;
    if (o.optional_text) c.optional_text = *o.optional_text;
    if (o.lambda_edit) c.weights.lambda_edit = *o.lambda_edit;
    if (o.edit_sign) c.weights.edit_sign = parse_edit_sign(*o.edit_sign);
    if (o.backend) c.backend.name = *o.backend;
    if (o.out) c.output_dir = fs::absolute(*o.out).lexically_normal();
    if (o.n_steps) c.optimize.n_steps = *o.n_steps;
    if (o.sampler_steps) c.sampler.steps = *o.sampler_steps;
    c.validate(false, false);
    return c;
}

InvertResult cmd_invert(const RunConfig& config, std::ostream& log) {
    config.validate(true, true);
    const DatasetManifest manifest = load_checked_manifest(config, true);
    const auto backend = make_backend(config.backend);
    const auto& desc = backend->descriptor();
    const NoiseSchedule schedule = config.schedule();
    const ManifestEntry& train = manifest.find(config.train_id);
    const Image photo = load_for_backend(train.photo_path, desc);
    const Image sketch = load_for_backend(train.sketch_path, desc);

    fs::create_directories(config.output_dir);
    InvertResult out;
    out.instruction_path = config.output_dir / "ins.osi";
    out.trace_path = config.output_dir / "trace.jsonl";
    out.manifest_path = config.output_dir / "run_invert.json";

    json run{{"command", "invert"},
             {"status", "running"},
             {"config_hash", config_hash(config)},
             {"config", to_toml(config)},
             {"seeds", seeds_of(config)},
             {"train_id", config.train_id},
             {"backend", desc.name}};

    const InstructionEmbedding c0 = backend->init_instruction(sketch, config.init, config.n_learnable, config.optimize.seed);
    std::ofstream trace(out.trace_path, std::ios::trunc);
    if (!trace) throw IoError("cannot write " + out.trace_path.string());
    const TraceSink sink = [&](const TraceRecord& r) {
        trace << to_json_line(r) << '\n';
        trace.flush();
    };

    log << "invert: " << config.optimize.n_steps << " steps on pair '" << config.train_id << "' (" << desc.name
        << " backend)\n";
    InversionResult result;
    try {
        result = optimize_instruction(*backend, photo, sketch, c0, config.weights, config.optimize, schedule, sink);
    } catch (const DivergenceError& e) {
        run["status"] = "diverged";
        run["error"] = e.what();
        run["diverged_at_step"] = e.step();
        write_json(out.manifest_path, run);
        throw;
    }
    trace.close();
    save_instruction(result.embedding, out.instruction_path, desc, config.backend.seed);

    out.train_wall_s = result.wall_s;
    const TraceRecord& last = result.trace.records.back();
    run["status"] = "ok";
    run["steps"] = config.optimize.n_steps;
    run["train_wall_s"] = result.wall_s;
    run["edit_direction_norm"] = result.direction.norm;
    run["final"] = json::parse(to_json_line(last));
    write_json(out.manifest_path, run);
    log << "invert: loss " << result.trace.records.front().loss_total << " -> " << last.loss_total << " in "
        << result.wall_s << " s; wrote " << out.instruction_path.string() << "\n";
    return out;
}

InferResult cmd_infer(const RunConfig& config, const InferOptions& options, std::ostream& log) {
    config.validate(true, false);
    if (options.jobs < 1) throw ValidationError("--jobs", "must be >= 1");
    const DatasetManifest manifest = load_manifest(config.dataset_root);
    const auto backend = make_backend(config.backend);
    const auto& desc = backend->descriptor();
    const NoiseSchedule schedule = config.schedule();
    config.sampler.validate(schedule);

    const fs::path ins_path = options.instruction.value_or(config.output_dir / "ins.osi");
    const InstructionEmbedding ins = load_instruction(ins_path, desc);
    const HybridInstruction hybrid = compose_hybrid(*backend, ins, config.optional_text);

    std::vector<std::string> ids = options.ids;
    if (ids.empty()) {
        if (!config.train_id.empty()) {
            if (!manifest.contains(config.train_id)) {
                throw ValidationError("dataset.train_id", "'" + config.train_id + "' is not in the manifest");
            }
            for (const auto& e : one_shot_split(manifest, config.train_id).eval) ids.push_back(e.id);
        } else {
            for (const auto& e : manifest.entries) ids.push_back(e.id);
        }
    }
    for (const auto& id : ids) {
        if (!manifest.contains(id)) throw ValidationError("--ids", "'" + id + "' is not in the manifest");
    }

    const fs::path image_dir = config.output_dir / "images";
    fs::create_directories(image_dir);
    log << "infer: " << ids.size() << " photos, " << hybrid.composed.n_tokens() << " instruction tokens ("
        << ins.n_tokens() << " learned)\n";

    InferResult result;
    result.images.resize(ids.size());
    Stopwatch clock;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
        for (std::size_t i = next++; i < ids.size(); i = next++) {
            try {
                const auto& entry = manifest.find(ids[i]);
                const LatentImage z_p = backend->encode_image(load_for_backend(entry.photo_path, desc));
                SamplerConfig cfg = config.sampler;
                cfg.seed = photo_seed(config.sampler.seed, ids[i]);
                const SampleResult s = sample(*backend, z_p, hybrid.composed, cfg, schedule);
                const fs::path path = image_dir / (ids[i] + ".png");
                save_png(path, s.decoded.image);
                result.images[i] = path;
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = ids.size();
            }
        }
    };
    const int threads = std::min<int>(options.jobs, static_cast<int>(std::max<std::size_t>(ids.size(), 1)));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    const double wall = clock.seconds();
    result.infer_wall_s_per_image = ids.empty() ? 0.0 : wall / static_cast<double>(ids.size());
    json per_photo = json::object();
    for (const auto& id : ids) per_photo[id] = photo_seed(config.sampler.seed, id);
    write_json(config.output_dir / "run_infer.json",
               json{{"command", "infer"},
                    {"status", "ok"},
                    {"config_hash", config_hash(config)},
                    {"config", to_toml(config)},
                    {"seeds", seeds_of(config)},
                    {"photo_seeds", per_photo},
                    {"instruction", ins_path.string()},
                    {"optional_text", config.optional_text},
                    {"instruction_tokens", hybrid.composed.n_tokens()},
                    {"images", ids.size()},
                    {"infer_wall_s", wall},
                    {"infer_wall_s_per_image", result.infer_wall_s_per_image}});
    log << "infer: wrote " << ids.size() << " images to " << image_dir.string() << "\n";
    return result;
}

MetricReport cmd_eval(const RunConfig& config, const std::optional<fs::path>& outputs_dir, std::ostream& log) {
    config.validate(true, false);
    const DatasetManifest manifest = load_manifest(config.dataset_root);
    const auto backend = make_backend(config.backend);
    const fs::path dir = outputs_dir.value_or(config.output_dir / "images");

    std::vector<fs::path> files;
    if (fs::is_directory(dir)) {
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
        }
    }
    if (files.empty()) throw IoError("no outputs in " + dir.string());
    std::sort(files.begin(), files.end());

    std::vector<LabeledImage> outputs;
    std::vector<std::string> offenders;
    for (const auto& f : files) {
        const std::string id = f.stem().string();
        if (!manifest.contains(id)) {
            offenders.push_back(id);
            continue;
        }
        outputs.emplace_back(id, load_image(f));
    }
    if (!offenders.empty()) {
        std::string msg = "outputs without a manifest entry:";
        for (const auto& id : offenders) msg += " " + id;
        throw ValidationError("outputs", msg);
    }

    RunTimings timings;
    if (const json inv = read_json_if_exists(config.output_dir / "run_invert.json"); inv.is_object()) {
        timings.train_wall_s = inv.value("train_wall_s", 0.0);
    }
    if (const json inf = read_json_if_exists(config.output_dir / "run_infer.json"); inf.is_object()) {
        timings.infer_wall_s_per_image = inf.value("infer_wall_s_per_image", 0.0);
    }

    const MetricReport report = evaluate_run(*backend, outputs, manifest, timings, config_hash(config));
    write_report(report, config.output_dir);
    log << "eval: " << report.per_image.size() << " images, SSIM " << report.ssim_mean << ", LPIPS "
        << report.lpips_mean;
    if (report.fid) {
        log << ", FID " << *report.fid;
    } else {
        log << ", FID n/a (fewer than 2 outputs)";
    }
    log << "\n";
    return report;
}

json cmd_bench(const RunConfig& config, const BenchOptions& options, std::ostream& log) {
    config.validate(true, true);
    if (options.images < 1) throw ValidationError("--bench-images", "must be >= 1");
    const DatasetManifest manifest = load_checked_manifest(config, true);
    const auto backend = make_backend(config.backend);
    const auto& desc = backend->descriptor();
    const NoiseSchedule schedule = config.schedule();
    config.sampler.validate(schedule);
    const ManifestEntry& train = manifest.find(config.train_id);
    const Image photo = load_for_backend(train.photo_path, desc);
    const Image sketch = load_for_backend(train.sketch_path, desc);

    OptimizeConfig opt = config.optimize;
    opt.log_every = 1;  // per-step timestamps
    const InstructionEmbedding c0 = backend->init_instruction(sketch, config.init, config.n_learnable, opt.seed);
    const InversionResult inv = optimize_instruction(*backend, photo, sketch, c0, config.weights, opt, schedule);
    const auto& recs = inv.trace.records;
    const double mean_step_ms =
        recs.size() > 1 ? (recs.back().wall_ms - recs.front().wall_ms) / static_cast<double>(recs.size() - 1)
                        : recs.back().wall_ms;

    const HybridInstruction hybrid = compose_hybrid(*backend, inv.embedding, config.optional_text);
    const OneShotSplit split = one_shot_split(manifest, config.train_id);
    std::vector<const ManifestEntry*> photos;
    for (const auto& e : split.eval) {
        if (static_cast<int>(photos.size()) == options.images) break;
        photos.push_back(&e);
    }
    if (photos.empty()) photos.push_back(&train);
    std::vector<LatentImage> latents;
    for (const auto* e : photos) latents.push_back(backend->encode_image(load_for_backend(e->photo_path, desc)));

    Stopwatch clock;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        SamplerConfig cfg = config.sampler;
        cfg.seed = photo_seed(config.sampler.seed, photos[i]->id);
        (void)sample(*backend, latents[i], hybrid.composed, cfg, schedule);
    }
    const double infer_per_image = clock.seconds() / static_cast<double>(latents.size());

    json table{{"backend", desc.name},
               {"train_steps", opt.n_steps},
               {"train_wall_s", inv.wall_s},
               {"mean_step_ms", mean_step_ms},
               {"sampler_steps", config.sampler.steps},
               {"infer_images", latents.size()},
               {"infer_wall_s_per_image", infer_per_image}};
    fs::create_directories(config.output_dir);
    write_json(config.output_dir / "bench.json", table);
    log << table.dump() << "\n";
    return table;
}

int exit_code_for(const std::exception& error) {
    if (dynamic_cast<const ValidationError*>(&error) || dynamic_cast<const TokenOverflowError*>(&error) ||
        dynamic_cast<const DescriptorMismatchError*>(&error) || dynamic_cast<const UnsupportedError*>(&error)) {
        return kValidation;
    }
    if (dynamic_cast<const DivergenceError*>(&error)) return kDivergence;
    if (dynamic_cast<const IoError*>(&error) || dynamic_cast<const DatasetError*>(&error) ||
        dynamic_cast<const FormatError*>(&error) || dynamic_cast<const fs::filesystem_error*>(&error)) {
        return kIo;
    }
    return kFailure;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"One-shot face sketch synthesis by instruction inversion"};
    app.name(args.empty() ? "osketch" : args.front());
    app.require_subcommand(1);

    fs::path config_path;
    Overrides o;
    std::string train_id, optional_text, edit_sign, backend, out_dir;
    double lambda_edit = 0.0;
    int n_steps = 0, sampler_steps = 0;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Run configuration (TOML)")->required();
        sub->add_option("--train-id", train_id, "Id of the single training pair");
        sub->add_option("--optional-text", optional_text, "Text appended to the learned instruction");
        sub->add_option("--lambda-edit", lambda_edit, "Weight of the edit-direction loss");
        sub->add_option("--edit-sign", edit_sign, "align | paper_literal");
        sub->add_option("--backend", backend, "toy | pretrained");
        sub->add_option("--out", out_dir, "Output directory");
        sub->add_option("--n-steps", n_steps, "Inversion steps");
        sub->add_option("--sampler-steps", sampler_steps, "Sampling steps");
    };

    CLI::App* invert = app.add_subcommand("invert", "Optimize the instruction on one photo/sketch pair");
    add_common(invert);

    InferOptions infer_opts;
    std::string instruction;
    CLI::App* infer = app.add_subcommand("infer", "Synthesize sketches with the learned instruction");
    add_common(infer);
    infer->add_option("--instruction", instruction, "Instruction file (default <out>/ins.osi)");
    infer->add_option("--ids", infer_opts.ids, "Photo ids (default: every id except the training pair)");
    infer->add_option("--jobs", infer_opts.jobs, "Parallel sampling workers");

    std::string outputs;
    CLI::App* eval = app.add_subcommand("eval", "Score generated sketches (SSIM / LPIPS / FID)");
    add_common(eval);
    eval->add_option("--outputs", outputs, "Directory of <id>.png outputs (default <out>/images)");

    BenchOptions bench_opts;
    CLI::App* bench = app.add_subcommand("bench", "Time the inversion loop and per-image sampling");
    add_common(bench);
    bench->add_option("--bench-images", bench_opts.images, "Photos to sample for the inference timing");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidation;
    }

    const auto given = [](CLI::App* sub, const char* flag) { return sub->count(flag) > 0; };
    CLI::App* active = app.get_subcommands().front();
    if (given(active, "--train-id")) o.train_id = train_id;
    if (given(active, "--optional-text")) o.optional_text = optional_text;
    if (given(active, "--lambda-edit")) o.lambda_edit = lambda_edit;
    if (given(active, "--edit-sign")) o.edit_sign = edit_sign;
    if (given(active, "--backend")) o.backend = backend;
    if (given(active, "--out")) o.out = out_dir;
    if (given(active, "--n-steps")) o.n_steps = n_steps;
    if (given(active, "--sampler-steps")) o.sampler_steps = sampler_steps;

    try {
        const RunConfig config = resolve_config(config_path, o);
        if (active == invert) {
            cmd_invert(config, err);
        } else if (active == infer) {
            if (!instruction.empty()) infer_opts.instruction = fs::absolute(instruction);
            cmd_infer(config, infer_opts, err);
        } else if (active == eval) {
            std::optional<fs::path> dir;
            if (!outputs.empty()) dir = fs::absolute(outputs);
            cmd_eval(config, dir, err);
        } else {
            const json table = cmd_bench(config, bench_opts, err);
            out << table.dump(2) << "\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kOk;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace osketch::cli
