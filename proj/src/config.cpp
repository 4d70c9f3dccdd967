// SPDX-License-Identifier: Apache-2.0
#include "osketch/config.hpp"

#include "osketch/errors.hpp"
#include "osketch/rng.hpp"

#include <toml.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace osketch {

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"backend", {"name", "seed", "checkpoint", "image_size"}},
        {"schedule", {"T", "kind"}},
        {"invert",
         {"steps", "lr", "lambda_rec", "lambda_edit", "edit_sign", "rec_norm", "n_learnable", "init", "seed",
          "log_every", "adam_beta1", "adam_beta2", "adam_epsilon", "weight_decay", "divergence_threshold"}},
        {"sampler", {"steps", "guidance_text", "guidance_image", "eta", "seed", "optional_text"}},
        {"dataset", {"root", "train_id"}},
        {"output", {"dir"}},
    };
    return keys;
}

class Section {
public:
    Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

    std::string path(const char* key) const { return name_ + "." + key; }

    const toml::node* node(const char* key) const { return table_ ? table_->get(key) : nullptr; }

    void read(const char* key, std::int64_t& out) const {
        if (const auto* n = node(key)) {
            const auto v = n->value_exact<std::int64_t>();
            if (!v) throw ValidationError(path(key), "expected an integer");
            out = *v;
        }
    }
    void read(const char* key, int& out) const {
        std::int64_t v = out;
        read(key, v);
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
            throw ValidationError(path(key), "integer out of range");
        }
        out = static_cast<int>(v);
    }
    void read_seed(const char* key, std::uint64_t& out) const {
        std::int64_t v = static_cast<std::int64_t>(out);
        read(key, v);
        if (v < 0) throw ValidationError(path(key), "seed must be >= 0");
        out = static_cast<std::uint64_t>(v);
    }
    void read(const char* key, double& out) const {
        if (const auto* n = node(key)) {
            if (const auto d = n->value_exact<double>()) {
                out = *d;
            } else if (const auto i = n->value_exact<std::int64_t>()) {
                out = static_cast<double>(*i);
            } else {
                throw ValidationError(path(key), "expected a number");
            }
        }
    }
    void read(const char* key, std::string& out) const {
        if (const auto* n = node(key)) {
            const auto v = n->value_exact<std::string>();
            if (!v) throw ValidationError(path(key), "expected a string");
            out = *v;
        }
    }
    template <class Parse, class T>
    void read_enum(const char* key, T& out, Parse parse) const {
        std::string text;
        if (node(key) == nullptr) return;
        read(key, text);
        try {
            out = parse(text);
        } catch (const ValidationError&) {
            throw;
        } catch (const Error& e) {
            throw ValidationError(path(key), e.what());
        }
    }

private:
    const toml::table* table_;
    std::string name_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& text) {
    if (text.empty()) return {};
    std::filesystem::path p(text);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.lexically_normal();
}

}  // namespace

void RunConfig::validate(bool require_dataset, bool require_train_id) const {
    if (backend.name.empty()) throw ValidationError("backend.name", "required");
    if (backend.name == "toy" && (backend.image_size <= 0 || backend.image_size % 2 != 0)) {
        throw ValidationError("backend.image_size", "must be a positive even integer");
    }
    if (backend.name == "pretrained" && backend.checkpoint.empty()) {
        throw ValidationError("backend.checkpoint", "required for the pretrained backend");
    }
    if (schedule_T < 1) throw ValidationError("schedule.T", "must be >= 1");
    optimize.validate();
    weights.validate();
    if (n_learnable < 1) throw ValidationError("invert.n_learnable", "must be >= 1");
    if (sampler.steps < 1) throw ValidationError("sampler.steps", "must be >= 1");
    if (sampler.steps > schedule_T) throw ValidationError("sampler.steps", "must be <= schedule.T");
    if (!std::isfinite(sampler.guidance_text)) throw ValidationError("sampler.guidance_text", "must be finite");
    if (!std::isfinite(sampler.guidance_image)) throw ValidationError("sampler.guidance_image", "must be finite");
    if (!(sampler.eta >= 0.0 && sampler.eta <= 1.0)) throw ValidationError("sampler.eta", "must be in [0, 1]");
    if (require_dataset) {
        if (dataset_root.empty()) throw ValidationError("dataset.root", "required");
        if (!std::filesystem::is_directory(dataset_root)) {
            throw ValidationError("dataset.root", "directory does not exist: " + dataset_root.string());
        }
    }
    if (require_train_id && train_id.empty()) throw ValidationError("dataset.train_id", "required");
    if (output_dir.empty()) throw ValidationError("output.dir", "required");
}

RunConfig parse_run_config(const std::string& toml_text, const std::filesystem::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << e.description() << " (line " << e.source().begin.line << ")";
        throw ValidationError("config", msg.str());
    }
    for (auto&& [key, node] : root) {
        const std::string name(key.str());
        const auto it = known_keys().find(name);
        if (it == known_keys().end()) throw ValidationError(name, "unknown section");
        const auto* table = node.as_table();
        if (table == nullptr) throw ValidationError(name, "expected a table");
        for (auto&& [sub, unused] : *table) {
            if (!it->second.contains(std::string(sub.str()))) {
                throw ValidationError(name + "." + std::string(sub.str()), "unknown key");
            }
        }
    }
    const auto section = [&](const char* name) { return Section(root[name].as_table(), name); };

    RunConfig c;
    const Section backend = section("backend");
    backend.read("name", c.backend.name);
    backend.read_seed("seed", c.backend.seed);
    std::string checkpoint;
    backend.read("checkpoint", checkpoint);
    c.backend.checkpoint = checkpoint;
    backend.read("image_size", c.backend.image_size);

    const Section schedule = section("schedule");
    schedule.read("T", c.schedule_T);
    schedule.read_enum("kind", c.schedule_kind, parse_schedule_kind);

    const Section invert = section("invert");
    invert.read("steps", c.optimize.n_steps);
    invert.read("lr", c.optimize.lr);
    invert.read("lambda_rec", c.weights.lambda_rec);
    invert.read("lambda_edit", c.weights.lambda_edit);
    invert.read_enum("edit_sign", c.weights.edit_sign, parse_edit_sign);
    invert.read_enum("rec_norm", c.optimize.rec_norm, parse_rec_norm);
    invert.read("n_learnable", c.n_learnable);
    invert.read_enum("init", c.init, parse_init_mode);
    invert.read_seed("seed", c.optimize.seed);
    invert.read("log_every", c.optimize.log_every);
    invert.read("adam_beta1", c.optimize.adam_beta1);
    invert.read("adam_beta2", c.optimize.adam_beta2);
    invert.read("adam_epsilon", c.optimize.adam_epsilon);
    invert.read("weight_decay", c.optimize.weight_decay);
    invert.read("divergence_threshold", c.optimize.divergence_threshold);

    const Section sampler = section("sampler");
    sampler.read("steps", c.sampler.steps);
    sampler.read("guidance_text", c.sampler.guidance_text);
    sampler.read("guidance_image", c.sampler.guidance_image);
    sampler.read("eta", c.sampler.eta);
    sampler.read_seed("seed", c.sampler.seed);
    sampler.read("optional_text", c.optional_text);

    const Section dataset = section("dataset");
    std::string root_text;
    dataset.read("root", root_text);
    c.dataset_root = resolve(base_dir, root_text);
    dataset.read("train_id", c.train_id);

    const Section output = section("output");
    std::string out_text = c.output_dir.string();
    output.read("dir", out_text);
    c.output_dir = resolve(base_dir, out_text);

    c.validate(false, false);
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_run_config(buffer.str(), std::filesystem::absolute(path).parent_path());
}

std::string to_toml(const RunConfig& c) {
    toml::table backend{{"name", c.backend.name},
                        {"seed", static_cast<std::int64_t>(c.backend.seed)},
                        {"checkpoint", c.backend.checkpoint},
                        {"image_size", c.backend.image_size}};
    toml::table schedule{{"T", c.schedule_T}, {"kind", std::string(to_string(c.schedule_kind))}};
    toml::table invert{{"steps", c.optimize.n_steps},
                       {"lr", c.optimize.lr},
                       {"lambda_rec", c.weights.lambda_rec},
                       {"lambda_edit", c.weights.lambda_edit},
                       {"edit_sign", std::string(to_string(c.weights.edit_sign))},
                       {"rec_norm", std::string(to_string(c.optimize.rec_norm))},
                       {"n_learnable", c.n_learnable},
                       {"init", std::string(to_string(c.init))},
                       {"seed", static_cast<std::int64_t>(c.optimize.seed)},
                       {"log_every", c.optimize.log_every},
                       {"adam_beta1", c.optimize.adam_beta1},
                       {"adam_beta2", c.optimize.adam_beta2},
                       {"adam_epsilon", c.optimize.adam_epsilon},
                       {"weight_decay", c.optimize.weight_decay},
                       {"divergence_threshold", c.optimize.divergence_threshold}};
    toml::table sampler{{"steps", c.sampler.steps},
                        {"guidance_text", c.sampler.guidance_text},
                        {"guidance_image", c.sampler.guidance_image},
                        {"eta", c.sampler.eta},
                        {"seed", static_cast<std::int64_t>(c.sampler.seed)},
                        {"optional_text", c.optional_text}};
    toml::table dataset{{"root", c.dataset_root.string()}, {"train_id", c.train_id}};
    toml::table output{{"dir", c.output_dir.string()}};
    toml::table root{{"backend", backend}, {"schedule", schedule}, {"invert", invert},
                     {"sampler", sampler}, {"dataset", dataset},   {"output", output}};
    std::ostringstream out;
    out << root << "\n";
    return out.str();
}

std::string config_hash(const RunConfig& config) {
    RunConfig copy = config;
    copy.output_dir = "-";
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(to_toml(copy))));
    return buf;
}

}  // namespace osketch
