#include "reptree/cli.hpp"

#include <json.hpp>
#include <openssl/sha.h>

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace reptree::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim_copy(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim_copy(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim_copy(item));
    return out;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out << text;
}

// Reads typed values out of a KeyValues map and remembers which keys were used.
class KeyReader {
  public:
    explicit KeyReader(const KeyValues& keys) : keys_(keys) {}

    [[nodiscard]] bool has(const std::string& key) const { return keys_.contains(key); }

    std::string text(const std::string& key, const std::string& fallback) {
        used_.insert(key);
        const auto it = keys_.find(key);
        return it == keys_.end() ? fallback : it->second;
    }

    long long integer(const std::string& key, long long fallback) {
        if (!has(key)) {
            used_.insert(key);
            return fallback;
        }
        const std::string v = text(key, "");
        long long out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size()) {
            throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
        }
        return out;
    }

    std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) {
            used_.insert(key);
            return fallback;
        }
        const std::string v = text(key, "");
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size()) {
            throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
        }
        return out;
    }

    double real(const std::string& key, double fallback) {
        if (!has(key)) {
            used_.insert(key);
            return fallback;
        }
        const std::string v = text(key, "");
        double out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size()) {
            throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
        }
        return out;
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) {
            used_.insert(key);
            return fallback;
        }
        const std::string v = text(key, "");
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
    }

    std::vector<int> int_list(const std::string& key, const std::vector<int>& fallback) {
        if (!has(key)) {
            used_.insert(key);
            return fallback;
        }
        std::vector<int> out;
        for (const auto& item : split_list(text(key, ""))) {
            int v = 0;
            const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (ec != std::errc() || ptr != item.data() + item.size()) {
                throw ConfigError("config key '" + key + "': '" + item + "' is not an integer");
            }
            out.push_back(v);
        }
        return out;
    }

    // Wraps parse failures of enum-like values with the key name.
    template <typename Parse>
    auto choice(const std::string& key, const std::string& fallback, Parse parse) {
        const std::string v = text(key, fallback);
        try {
            return parse(v);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    }

    void reject_unused() const {
        for (const auto& [key, value] : keys_) {
            if (!used_.contains(key)) {
                throw ConfigError("unknown config key '" + key + "'");
            }
        }
    }

  private:
    const KeyValues& keys_;
    std::set<std::string> used_;
};

std::string join_ints(const std::vector<int>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
    return out;
}

json metrics_json(const MetricSet& m) {
    json j = json::object();
    for (const auto& [name, value] : m.named()) j[name] = value;
    return j;
}

std::string headline_name(const ExperimentResult& r) {
    return r.config.data.task() == TaskKind::classification ? "acc" : "mae";
}

std::string sweep_dir_name(SweepParam p, const std::string& value) { return to_string(p) + "=" + value; }

}  // namespace

KeyValues parse_config_text(const std::string& text, const std::string& origin) {
    KeyValues keys;
    std::istringstream in(text);
    std::string line;
    std::string prefix;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim_copy(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
            const std::string section = trim_copy(line.substr(1, line.size() - 2));
            std::istringstream parts(section);
            std::string name, index, extra;
            parts >> name >> index >> extra;
            if (name.empty() || !extra.empty()) throw ConfigError(where + ": malformed section '" + section + "'");
            prefix = name + "." + (index.empty() ? "" : index + ".");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim_copy(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        keys[prefix + key] = trim_copy(line.substr(eq + 1));
    }
    return keys;
}

KeyValues read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file '" + path.string() + "'");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path.string());
}

void apply_overrides(KeyValues& keys, const std::vector<std::string>& overrides) {
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("override '" + item + "' is not key=value");
        }
        keys[trim_copy(item.substr(0, eq))] = trim_copy(item.substr(eq + 1));
    }
}

ExperimentConfig config_from_keys(const KeyValues& keys) {
    KeyReader r(keys);
    ExperimentConfig c;
    c.method = r.choice("method", "reptreefl", parse_method);

    const long long m = r.integer("clients", 3);
    if (m < 1 || m > 1000) throw ConfigError("config key 'clients': must lie in [1, 1000]");
    ClientTreeConfig tree;
    tree.replicas = static_cast<int>(r.integer("replicas", 3));
    tree.perturbation = r.real("perturbation", 10.0);
    tree.depth = static_cast<int>(r.integer("depth", 1));

    auto& fed = c.federation;
    fed.clients.assign(static_cast<std::size_t>(m), tree);
    for (long long i = 0; i < m; ++i) {
        const std::string p = "client." + std::to_string(i) + ".";
        auto& client = fed.clients[static_cast<std::size_t>(i)];
        client.replicas = static_cast<int>(r.integer(p + "replicas", client.replicas));
        client.perturbation = r.real(p + "perturbation", client.perturbation);
        client.depth = static_cast<int>(r.integer(p + "depth", client.depth));
    }
    fed.epochs = static_cast<int>(r.integer("epochs", 10));
    fed.rounds = static_cast<int>(r.integer("rounds", 10));
    fed.batch_size = static_cast<int>(r.integer("batch_size", 20));
    fed.lr = r.real("lr", 0.005);
    fed.optimizer = r.choice("optimizer", "sgd", parse_optimizer);
    fed.adam.beta1 = r.real("adam.beta1", 0.9);
    fed.adam.beta2 = r.real("adam.beta2", 0.999);
    fed.adam.epsilon = r.real("adam.epsilon", 1e-8);
    fed.perturbation_mode = r.choice("perturbation_mode", "random", parse_perturbation_mode);
    fed.aggregation = r.choice("aggregation", "diversity", parse_aggregation);
    fed.seed = r.unsigned_integer("seed", 0);
    fed.parallel = static_cast<int>(r.integer("parallel", 1));
    c.folds = static_cast<int>(r.integer("folds", 0));

    auto& d = c.data;
    d.source = r.text("data.source", "synthetic");
    d.kind = r.choice("data.kind", "gaussian_blobs", parse_synthetic_kind);
    d.samples_per_client = static_cast<int>(r.integer("data.samples_per_client", 200));
    d.features = static_cast<int>(r.integer("data.features", 8));
    d.classes = static_cast<int>(r.integer("data.classes", 2));
    d.outputs = static_cast<int>(r.integer("data.outputs", 1));
    d.synthetic.separation = r.real("data.separation", d.synthetic.separation);
    d.synthetic.noise = r.real("data.noise", d.synthetic.noise);
    d.stratified_folds = r.boolean("data.stratified_folds", false);
    d.csv_path = r.text("data.csv_path", "");
    d.csv.task = r.choice("data.task", "classification", [](const std::string& s) {
        if (s == "classification") return TaskKind::classification;
        if (s == "regression") return TaskKind::regression;
        throw std::invalid_argument("unknown task '" + s + "'");
    });
    d.csv.label_column = static_cast<int>(r.integer("data.label_column", 0));
    d.csv.feature_columns = r.int_list("data.feature_columns", {});
    d.csv.target_columns = r.int_list("data.target_columns", {});
    d.csv.header = r.boolean("data.header", true);
    d.csv.num_classes = static_cast<int>(r.integer("data.num_classes", 0));

    c.network.hidden = r.int_list("model.hidden", {32});
    c.network.activation = r.choice("model.activation", "relu", parse_activation);
    c.network.personalize_head = r.boolean("model.personalize_head", false);

    bool any_outputs = false;
    std::vector<int> outputs(static_cast<std::size_t>(m), c.data.outputs);
    for (long long i = 0; i < m; ++i) {
        const std::string key = "client." + std::to_string(i) + ".outputs";
        if (r.has(key)) any_outputs = true;
        outputs[static_cast<std::size_t>(i)] = static_cast<int>(r.integer(key, c.data.outputs));
    }
    if (any_outputs) c.client_outputs = outputs;

    const std::string default_loss = c.data.task() == TaskKind::classification ? "cross_entropy" : "l1";
    const std::string loss = r.text("loss", "auto");
    try {
        fed.loss = parse_loss(loss == "auto" ? default_loss : loss);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'loss': ") + e.what());
    }

    r.reject_unused();
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
    return c;
}

KeyValues config_to_keys(const ExperimentConfig& c) {
    KeyValues k;
    const auto& fed = c.federation;
    k["method"] = to_string(c.method);
    k["clients"] = std::to_string(fed.num_clients());
    for (int i = 0; i < fed.num_clients(); ++i) {
        const std::string p = "client." + std::to_string(i) + ".";
        const auto& client = fed.clients[static_cast<std::size_t>(i)];
        k[p + "replicas"] = std::to_string(client.replicas);
        k[p + "perturbation"] = format_real(client.perturbation);
        k[p + "depth"] = std::to_string(client.depth);
        if (!c.client_outputs.empty()) k[p + "outputs"] = std::to_string(c.client_outputs[static_cast<std::size_t>(i)]);
    }
    k["epochs"] = std::to_string(fed.epochs);
    k["rounds"] = std::to_string(fed.rounds);
    k["batch_size"] = std::to_string(fed.batch_size);
    k["lr"] = format_real(fed.lr);
    k["optimizer"] = to_string(fed.optimizer);
    k["adam.beta1"] = format_real(fed.adam.beta1);
    k["adam.beta2"] = format_real(fed.adam.beta2);
    k["adam.epsilon"] = format_real(fed.adam.epsilon);
    k["loss"] = to_string(fed.loss);
    k["perturbation_mode"] = to_string(fed.perturbation_mode);
    k["aggregation"] = to_string(fed.aggregation);
    k["seed"] = std::to_string(fed.seed);
    k["folds"] = std::to_string(c.num_folds());

    const auto& d = c.data;
    k["data.source"] = d.source;
    k["data.stratified_folds"] = d.stratified_folds ? "true" : "false";
    if (d.source == "synthetic") {
        k["data.kind"] = to_string(d.kind);
        k["data.samples_per_client"] = std::to_string(d.samples_per_client);
        k["data.features"] = std::to_string(d.features);
        if (d.kind == SyntheticKind::gaussian_blobs) {
            k["data.classes"] = std::to_string(d.classes);
            k["data.separation"] = format_real(d.synthetic.separation);
        } else {
            k["data.outputs"] = std::to_string(d.outputs);
            k["data.noise"] = format_real(d.synthetic.noise);
        }
    } else {
        k["data.csv_path"] = d.csv_path;
        k["data.task"] = d.csv.task == TaskKind::classification ? "classification" : "regression";
        k["data.label_column"] = std::to_string(d.csv.label_column);
        k["data.feature_columns"] = join_ints(d.csv.feature_columns);
        k["data.target_columns"] = join_ints(d.csv.target_columns);
        k["data.header"] = d.csv.header ? "true" : "false";
        k["data.num_classes"] = std::to_string(d.csv.num_classes);
    }
    k["model.hidden"] = join_ints(c.network.hidden);
    k["model.activation"] = to_string(c.network.activation);
    k["model.personalize_head"] = c.network.personalize_head ? "true" : "false";
    return k;
}

std::string canonical_text(const ExperimentConfig& config) {
    std::string out;
    for (const auto& [key, value] : config_to_keys(config)) out += key + "=" + value + "\n";
    return out;
}

std::string git_blob_hash(const std::string& text) {
    const std::string object = "blob " + std::to_string(text.size()) + '\0' + text;
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(object.data()), object.size(), digest);
    std::ostringstream os;
    for (unsigned char byte : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(byte);
    return os.str();
}

std::string format_real(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

ExperimentConfig resolve_config(const RunOptions& options) {
    KeyValues keys;
    if (options.config_path) keys = read_config_file(*options.config_path);
    apply_overrides(keys, options.overrides);
    if (options.method) keys["method"] = *options.method;
    if (options.seed) keys["seed"] = std::to_string(*options.seed);
    keys["parallel"] = std::to_string(options.parallel);
    return config_from_keys(keys);
}

std::string results_json(const ExperimentResult& result) {
    json j;
    j["method"] = result.method;
    j["config"] = config_to_keys(result.config);
    j["config_hash"] = git_blob_hash(canonical_text(result.config));
    j["task"] = result.config.data.task() == TaskKind::classification ? "classification" : "regression";
    json folds = json::array();
    for (std::size_t f = 0; f < result.per_fold.size(); ++f) {
        json clients = json::array();
        for (std::size_t i = 0; i < result.per_fold[f].size(); ++i) {
            clients.push_back({{"client", i}, {"metrics", metrics_json(result.per_fold[f][i])}});
        }
        folds.push_back({{"fold", f}, {"clients", clients}});
    }
    j["folds"] = folds;
    json summary = json::array();
    for (std::size_t i = 0; i < result.mean.size(); ++i) {
        summary.push_back(
            {{"client", i}, {"mean", metrics_json(result.mean[i])}, {"std", metrics_json(result.stddev[i])}});
    }
    j["summary"] = summary;
    return j.dump(2) + "\n";
}

void write_rounds_csv(const ExperimentResult& result, const fs::path& path) {
    std::ostringstream os;
    os << "fold,round,anchor,replica_path,div,alpha,loss," << headline_name(result) << "\n";
    for (std::size_t f = 0; f < result.rounds.size(); ++f) {
        for (const auto& round : result.rounds[f]) {
            for (const auto& a : round.anchors) {
                for (const auto& d : a.diversity) {
                    os << f << ',' << round.round << ',' << a.anchor << ',' << format_path(d.child) << ','
                       << format_real(d.div) << ',' << format_real(d.alpha) << ',' << format_real(d.child_loss)
                       << ",\n";
                }
                os << f << ',' << round.round << ',' << a.anchor << ',' << a.anchor << ",,,"
                   << (a.losses.empty() ? std::string() : format_real(a.losses.back())) << ','
                   << (a.metrics ? format_real(a.metrics->headline()) : std::string()) << "\n";
            }
        }
    }
    write_text(path, os.str());
}

void write_run_outputs(const ExperimentResult& result, const fs::path& out_dir, const std::string& started_at,
                       int parallel) {
    fs::create_directories(out_dir);
    const std::string canonical = canonical_text(result.config);
    write_text(out_dir / "results.json", results_json(result));
    write_rounds_csv(result, out_dir / "rounds.csv");

    json manifest;
    manifest["config"] = config_to_keys(result.config);
    manifest["config_hash"] = git_blob_hash(canonical);
    manifest["seed"] = result.config.federation.seed;
    manifest["method"] = result.method;
    manifest["started_at"] = started_at;
    manifest["finished_at"] = utc_now();
    manifest["duration_seconds"] = result.duration_seconds;
    manifest["parallel"] = parallel;
    manifest["outputs"] = {{"results", (out_dir / "results.json").string()},
                           {"rounds", (out_dir / "rounds.csv").string()},
                           {"manifest", (out_dir / "manifest.json").string()}};
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

int cmd_run(const RunOptions& options, std::ostream& err) {
    try {
        const std::string started = utc_now();
        const ExperimentConfig config = resolve_config(options);
        const ExperimentResult result = run_experiment(config);
        write_run_outputs(result, options.out_dir, started, options.parallel);
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_sweep(const RunOptions& options, const Sweep& sweep, std::ostream& err) {
    try {
        const std::string started = utc_now();
        const ExperimentConfig base = resolve_config(options);
        const auto results = run_ablation(base, sweep);
        fs::create_directories(options.out_dir);

        std::ostringstream summary;
        const bool classification = base.data.task() == TaskKind::classification;
        summary << "sweep_param,sweep_value,method,client,fold"
                << (classification ? ",accuracy,f1,sensitivity,specificity" : ",mae") << "\n";
        for (std::size_t s = 0; s < results.size(); ++s) {
            const auto& result = results[s];
            write_run_outputs(result, options.out_dir / sweep_dir_name(sweep.param, sweep.values[s]), started,
                              options.parallel);
            for (std::size_t f = 0; f < result.per_fold.size(); ++f) {
                for (std::size_t i = 0; i < result.per_fold[f].size(); ++i) {
                    summary << to_string(sweep.param) << ',' << sweep.values[s] << ',' << result.method << ',' << i
                            << ',' << f;
                    for (const auto& [name, value] : result.per_fold[f][i].named()) summary << ',' << format_real(value);
                    summary << "\n";
                }
            }
        }
        write_text(options.out_dir / "summary.csv", summary.str());
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_plotdata(const std::vector<fs::path>& dirs, std::ostream& out, std::ostream& err) {
    if (dirs.empty()) {
        err << "error: no result directories given\n";
        return 1;
    }
    try {
        std::vector<std::pair<fs::path, std::string>> sources;  // results.json, label suffix
        for (const auto& dir : dirs) {
            if (!fs::is_directory(dir)) {
                throw std::runtime_error("result directory '" + dir.string() + "' does not exist");
            }
            if (fs::exists(dir / "results.json")) {
                sources.emplace_back(dir / "results.json", "");
                continue;
            }
            std::vector<fs::path> subdirs;
            for (const auto& entry : fs::directory_iterator(dir)) {
                if (entry.is_directory() && fs::exists(entry.path() / "results.json")) subdirs.push_back(entry.path());
            }
            std::sort(subdirs.begin(), subdirs.end());
            if (subdirs.empty()) {
                throw std::runtime_error("'" + dir.string() + "' contains no results.json");
            }
            for (const auto& s : subdirs) sources.emplace_back(s / "results.json", "@" + s.filename().string());
        }

        std::ostringstream os;
        os << "method,client,fold,metric,value\n";
        for (const auto& [path, suffix] : sources) {
            std::ifstream in(path);
            json j;
            try {
                in >> j;
                const std::string method = j.at("method").get<std::string>() + suffix;
                for (const auto& fold : j.at("folds")) {
                    const auto f = fold.at("fold").get<int>();
                    for (const auto& client : fold.at("clients")) {
                        const auto i = client.at("client").get<int>();
                        for (const auto& [metric, value] : client.at("metrics").items()) {
                            os << method << ',' << i << ',' << f << ',' << metric << ','
                               << format_real(value.get<double>()) << "\n";
                        }
                    }
                }
            } catch (const json::exception& e) {
                throw std::runtime_error("corrupt results file '" + path.string() + "': " + e.what());
            }
        }
        out << os.str();
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace reptree::cli
