#include "aerodiff/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "aerodiff/checkpoint.hpp"
#include "aerodiff/error.hpp"

namespace aerodiff {

using nlohmann::json;

SamplerPlan SamplerConfig::plan(int num_steps) const {
    SigmaRule rule;
    if (sigma == "deterministic")
        rule = SigmaRule::deterministic();
    else if (sigma == "ddpm_equivalent")
        rule = SigmaRule::ddpm_equivalent();
    else if (sigma == "eta")
        rule = SigmaRule::with_eta(eta);
    else
        fail(ErrorKind::Config, "sampler.sigma: unknown rule '" + sigma + "' (deterministic, ddpm_equivalent, eta)");
    if (kind == "ddim") return SamplerPlan::ddim(num_steps, stride, rule);
    if (kind == "ddpm_full") return SamplerPlan::ddpm_full(num_steps);
    fail(ErrorKind::Config, "sampler.kind: unknown sampler '" + kind + "' (ddim, ddpm_full)");
}

SynthDatasetSpec SynthConfig::spec(std::uint64_t seed) const {
    SynthDatasetSpec s;
    s.size = size;
    s.replicates = replicates;
    s.cases = reference_case_layout(cases);
    s.alpha_deg = alpha_deg;
    s.noise_low = noise_low;
    s.noise_high = noise_high;
    s.seed = seed;
    return s;
}

EvalOptions RunConfig::eval_options() const {
    EvalOptions o;
    o.ensemble_size = evaluation.ensemble_size;
    o.shared_start = evaluation.shared_start;
    o.max_batch = evaluation.max_batch;
    o.subset = subset_from_string(evaluation.subset);
    o.case_ids = evaluation.cases;
    o.seed = seed;
    return o;
}

json default_config_tree() {
    const RunConfig d;
    return to_tree(d);
}

json to_tree(const RunConfig& c) {
    const auto& t = c.training;
    return json{
        {"seed", c.seed},
        {"schedule", {{"num_steps", c.schedule.num_steps}, {"beta_start", c.schedule.beta_start},
                      {"beta_end", c.schedule.beta_end}}},
        {"model", to_json(c.model)},
        {"training", {{"iterations", t.iterations}, {"batch_size", t.batch_size},
                      {"learning_rate", t.adam.learning_rate}, {"beta1", t.adam.beta1}, {"beta2", t.adam.beta2},
                      {"epsilon", t.adam.epsilon}, {"ema", t.ema}, {"ema_decay", t.ema_decay},
                      {"checkpoint_every", t.checkpoint_every}}},
        {"sampler", {{"kind", c.sampler.kind}, {"stride", c.sampler.stride}, {"sigma", c.sampler.sigma},
                     {"eta", c.sampler.eta}}},
        {"data", {{"root", c.data_root},
                  {"freestream_pressure", c.import.freestream_pressure},
                  {"synthetic", {{"size", c.synthetic.size}, {"replicates", c.synthetic.replicates},
                                 {"cases", c.synthetic.cases}, {"alpha_deg", c.synthetic.alpha_deg},
                                 {"noise_low", c.synthetic.noise_low}, {"noise_high", c.synthetic.noise_high}}}}},
        {"checkpoint", c.checkpoint},
        {"sample", {{"reynolds", c.sample.reynolds}, {"alpha_deg", c.sample.alpha_deg}, {"count", c.sample.count},
                    {"case_id", c.sample.case_id}, {"re_max", c.sample.re_max}, {"mask", c.sample.mask}}},
        {"evaluation", {{"ensemble_size", c.evaluation.ensemble_size}, {"shared_start", c.evaluation.shared_start},
                        {"max_batch", c.evaluation.max_batch}, {"subset", c.evaluation.subset},
                        {"cases", c.evaluation.cases}, {"dump_fields", c.evaluation.dump_fields}}},
    };
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

bool same_kind(const json& base, const json& value) {
    if (base.is_number_float()) return value.is_number();
    if (base.is_number_integer()) return value.is_number_integer();
    if (base.is_array()) return value.is_array();
    return base.type() == value.type();
}

std::string type_name(const json& v) {
    if (v.is_number_float()) return "number";
    if (v.is_number_integer()) return "integer";
    return v.type_name();
}

}  // namespace

void merge_config(json& base, const json& patch, const std::string& path) {
    require(patch.is_object(), ErrorKind::Config, (path.empty() ? "config" : path) + ": expected an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string where = join(path, key);
        require(base.contains(key), ErrorKind::Config, where + ": unknown key");
        json& slot = base[key];
        if (slot.is_object()) {
            merge_config(slot, value, where);
            continue;
        }
        require(same_kind(slot, value), ErrorKind::Config,
                where + ": expected " + type_name(slot) + ", got " + value.dump());
        slot = value.is_number() && slot.is_number_float() ? json(value.get<double>()) : value;
    }
}

void apply_overrides(json& tree, const std::vector<std::string>& overrides) {
    std::map<std::string, json> seen;
    for (const auto& text : overrides) {
        const auto eq = text.find('=');
        require(eq != std::string::npos && eq > 0, ErrorKind::Config,
                "--set '" + text + "': expected path=value");
        const std::string path = text.substr(0, eq), raw = text.substr(eq + 1);
        json value = json::parse(raw, nullptr, false);
        const json::json_pointer ptr("/" + std::regex_replace(path, std::regex("\\."), "/"));
        if (value.is_discarded() || (tree.contains(ptr) && tree.at(ptr).is_string())) value = raw;

        if (auto it = seen.find(path); it != seen.end())
            require(it->second == value, ErrorKind::Config,
                    path + ": conflicting overrides " + it->second.dump() + " and " + value.dump());
        seen[path] = value;

        json patch = value;
        std::string rest = path;
        std::vector<std::string> keys;
        for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1))
            keys.push_back(rest.substr(0, dot));
        keys.push_back(rest);
        for (auto k = keys.rbegin(); k != keys.rend(); ++k) patch = json{{*k, patch}};
        merge_config(tree, patch);
    }
}

namespace {

template <typename T>
T get(const json& tree, const std::string& dotted) {
    const json* node = &tree;
    std::string rest = dotted;
    for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1))
        node = &node->at(rest.substr(0, dot));
    const json& v = node->at(rest);
    try {
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
            require(!v.is_number_integer() || v.get<long long>() >= 0, ErrorKind::Config,
                    dotted + ": must be non-negative, got " + v.dump());
        return v.get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::Config, dotted + ": cannot read " + v.dump());
    }
}

template <typename Fn>
void section(const std::string& name, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Config) throw;
        fail(ErrorKind::Config, name + ": " + e.what());
    }
}

}  // namespace

RunConfig run_config_from_tree(const json& tree) {
    json full = default_config_tree();
    merge_config(full, tree);

    RunConfig c;
    c.seed = get<std::uint64_t>(full, "seed");
    c.schedule = {get<int>(full, "schedule.num_steps"), get<double>(full, "schedule.beta_start"),
                  get<double>(full, "schedule.beta_end")};
    c.model = denoiser_config_from_json(full["model"], "model");

    auto& t = c.training;
    t.iterations = get<std::size_t>(full, "training.iterations");
    t.batch_size = get<std::size_t>(full, "training.batch_size");
    t.adam = {get<double>(full, "training.learning_rate"), get<double>(full, "training.beta1"),
              get<double>(full, "training.beta2"), get<double>(full, "training.epsilon")};
    t.ema = get<bool>(full, "training.ema");
    t.ema_decay = get<double>(full, "training.ema_decay");
    t.checkpoint_every = get<std::size_t>(full, "training.checkpoint_every");
    t.seed = c.seed;

    c.sampler = {get<std::string>(full, "sampler.kind"), get<int>(full, "sampler.stride"),
                 get<std::string>(full, "sampler.sigma"), get<double>(full, "sampler.eta")};

    c.data_root = get<std::string>(full, "data.root");
    c.import.freestream_pressure = get<double>(full, "data.freestream_pressure");
    c.synthetic = {get<std::size_t>(full, "data.synthetic.size"),    get<std::size_t>(full, "data.synthetic.replicates"),
                   get<std::size_t>(full, "data.synthetic.cases"),   get<double>(full, "data.synthetic.alpha_deg"),
                   get<double>(full, "data.synthetic.noise_low"),    get<double>(full, "data.synthetic.noise_high")};
    c.checkpoint = get<std::string>(full, "checkpoint");

    c.sample = {get<double>(full, "sample.reynolds"),      get<double>(full, "sample.alpha_deg"),
                get<std::size_t>(full, "sample.count"),    get<std::uint32_t>(full, "sample.case_id"),
                get<double>(full, "sample.re_max"),        get<std::string>(full, "sample.mask")};

    auto& e = c.evaluation;
    e.ensemble_size = get<std::size_t>(full, "evaluation.ensemble_size");
    e.shared_start = get<bool>(full, "evaluation.shared_start");
    e.max_batch = get<std::size_t>(full, "evaluation.max_batch");
    e.subset = get<std::string>(full, "evaluation.subset");
    e.dump_fields = get<bool>(full, "evaluation.dump_fields");
    for (const auto& id : full["evaluation"]["cases"]) {
        require(id.is_number_unsigned() || (id.is_number_integer() && id.get<long long>() >= 0), ErrorKind::Config,
                "evaluation.cases: expected case ids, got " + id.dump());
        e.cases.push_back(id.get<std::uint32_t>());
    }
    c.validate();
    return c;
}

void RunConfig::validate() const {
    section("schedule", [&] { schedule.make(); });
    section("sampler", [&] { sampler.plan(schedule.num_steps).validate(schedule.make()); });
    training.validate();
    section("data.synthetic", [&] {
        require(synthetic.size >= 2, ErrorKind::Config, "data.synthetic.size must be >= 2");
        require(synthetic.replicates >= 1, ErrorKind::Config, "data.synthetic.replicates must be >= 1");
        require(synthetic.cases >= 1 && synthetic.cases <= 11, ErrorKind::Config, "data.synthetic.cases must be in 1..11");
        require(synthetic.noise_low >= 0.0 && synthetic.noise_high >= 0.0, ErrorKind::Config,
                "data.synthetic noise scales must be >= 0");
    });
    section("evaluation", [&] {
        require(evaluation.ensemble_size >= 2, ErrorKind::Config,
                "evaluation.ensemble_size must be >= 2 to estimate an uncertainty field");
        subset_from_string(evaluation.subset);
    });
    section("sample", [&] {
        require(sample.count >= 1, ErrorKind::Config, "sample.count must be >= 1");
        require(sample.reynolds > 0.0, ErrorKind::Config, "sample.reynolds must be > 0");
        require(sample.re_max >= 0.0, ErrorKind::Config, "sample.re_max must be >= 0");
    });
}

LoadedConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json tree = default_config_tree();
    if (!file.empty()) {
        std::ifstream in(file);
        require(in.good(), ErrorKind::Config, "cannot read config file " + file.string());
        json patch = json::parse(in, nullptr, false, true);
        require(!patch.is_discarded(), ErrorKind::Config, file.string() + ": not valid JSON");
        merge_config(tree, patch);
    }
    apply_overrides(tree, overrides);
    RunConfig config = run_config_from_tree(tree);
    return {config, to_tree(config)};
}

std::string config_hash(const json& tree) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : tree.dump()) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace aerodiff
