#include "run_config.hpp"

#include "epigam/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace epigam::cli {

namespace {

using nlohmann::json;

/// Object view that remembers which keys were read. Keys never read are
/// appended to `unknown` when the section goes out of scope.
class Section {
public:
    Section(const json& j, std::string path, std::vector<std::string>* unknown)
        : j_(j), path_(std::move(path)), unknown_(unknown) {
        if (!j_.is_object()) {
            throw ConfigError("'" + display() + "' must be an object");
        }
    }
    Section(const Section&) = delete;
    Section& operator=(const Section&) = delete;

    ~Section() {
        for (const auto& [key, _] : j_.items()) {
            if (!used_.count(key)) {
                unknown_->push_back(child_path(key));
            }
        }
    }

    const json* find(const std::string& key) {
        used_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() || it->is_null() ? nullptr : &*it;
    }

    template <class T>
    void read(const std::string& key, T& out) {
        if (const json* v = find(key)) {
            out = as<T>(*v, key);
        }
    }

    template <class T>
    void read(const std::string& key, std::optional<T>& out) {
        if (const json* v = find(key)) {
            out = as<T>(*v, key);
        }
    }

    Section sub(const std::string& key) {
        static const json empty = json::object();
        const json* v = find(key);
        return Section(v ? *v : empty, child_path(key), unknown_);
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    T as(const json& v, const std::string& key) const {
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + child_path(key) + "' has the wrong type");
        }
    }

private:
    std::string display() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::vector<std::string>* unknown_;
    std::set<std::string> used_;
};

Rate rate_key(const std::string& name, const std::string& path) {
    const auto r = rate_from_name(name);
    if (!r) {
        throw ConfigError("unknown rate '" + name + "' in '" + path + "'");
    }
    return *r;
}

Compartment compartment_key(const std::string& name, const std::string& path) {
    for (Compartment c : all_compartments()) {
        if (compartment_name(c) == name) {
            return c;
        }
    }
    throw ConfigError("unknown compartment '" + name + "' in '" + path + "'");
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

void read_range(Section& s, const std::string& key, SearchRange& range) {
    if (!s.has(key)) {
        s.find(key);
        return;
    }
    Section r = s.sub(key);
    r.read("lo", range.lo);
    r.read("hi", range.hi);
    r.read("log_scale", range.log_scale);
}

std::map<Rate, std::vector<std::string>> read_wiring(Section& parent, const std::string& key) {
    std::map<Rate, std::vector<std::string>> out;
    const json* v = parent.find(key);
    if (v == nullptr) {
        return out;
    }
    const std::string path = parent.child_path(key);
    if (!v->is_object()) {
        throw ConfigError("'" + path + "' must be an object");
    }
    for (const auto& [name, covs] : v->items()) {
        out[rate_key(name, path)] = parent.as<std::vector<std::string>>(covs, key + "." + name);
    }
    return out;
}

std::vector<double> parse_quantile_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw ConfigError("--quantiles: '" + item + "' is not a number");
        }
    }
    if (out.empty()) {
        throw ConfigError("--quantiles needs at least one value");
    }
    return out;
}

} // namespace

void RunConfig::validate() const {
    if (horizon < 1) {
        throw ConfigError("horizon must be >= 1");
    }
    if (train_window && *train_window <= horizon) {
        throw ConfigError("train_window must exceed the horizon");
    }
    if (threads < 1) {
        throw ConfigError("threads must be >= 1");
    }
    if (search.trials < 0) {
        throw ConfigError("search.trials must be >= 0");
    }
    if (fairness.bins < 1 || fairness.bootstrap_samples < 1) {
        throw ConfigError("fairness needs at least one bin and one bootstrap sample");
    }
    loss.validate();
    optimizer.validate();
}

void RunConfig::check_inputs_exist() const {
    for (const auto& [key, path] : {std::pair{"observations", &inputs.observations},
                                    std::pair{"time_varying", &inputs.time_varying},
                                    std::pair{"statics", &inputs.statics}, std::pair{"population", &inputs.population},
                                    std::pair{"adjacency", &inputs.adjacency}}) {
        if (path->empty()) {
            throw ConfigError("inputs." + std::string(key) + " is not set");
        }
        if (!std::filesystem::exists(*path)) {
            throw ConfigError("inputs." + std::string(key) + " does not exist: " + *path);
        }
    }
}

TrainConfig RunConfig::train_config(const PanelDataset& panel) const {
    TrainConfig c;
    c.horizon = horizon;
    c.train_window = train_window;
    if (train_end_date) {
        c.train_end_day = day_index(*train_end_date, panel.anchor_date);
    }
    c.loss = loss;
    c.optimizer = optimizer;
    c.optimizer.seed = seed;
    c.lambda_tf = lambda_tf;
    c.zeta = zeta;
    c.head_iterations = head_iterations;
    c.head_learning_rate = head_learning_rate;
    c.encoders = make_encoders(encoders.time_varying, encoders.statics, encoders.lag_depth);
    for (const auto& [r, b] : encoders.bounds) {
        c.encoders[r].lower_bound = b.lower;
        c.encoders[r].upper_bound = b.upper;
    }
    c.initial_rates = default_initial_rates();
    for (const auto& [r, v] : encoders.initial_rates) {
        c.initial_rates[static_cast<std::size_t>(r)] = v;
    }
    c.validate();
    return c;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    std::vector<std::string> unknown;
    {
        Section root(j, "", &unknown);
        {
            Section in = root.sub("inputs");
            in.read("observations", c.inputs.observations);
            in.read("time_varying", c.inputs.time_varying);
            in.read("statics", c.inputs.statics);
            in.read("population", c.inputs.population);
            in.read("adjacency", c.inputs.adjacency);
        }
        for (std::string* p : {&c.inputs.observations, &c.inputs.time_varying, &c.inputs.statics,
                               &c.inputs.population, &c.inputs.adjacency}) {
            if (!p->empty()) {
                *p = resolve(base_dir, *p);
            }
        }
        std::string level = std::string(level_name(c.level));
        root.read("level", level);
        c.level = parse_level(level);
        root.read("anchor_date", c.anchor_date);
        root.read("horizon", c.horizon);
        root.read("train_window", c.train_window);
        root.read("train_end_date", c.train_end_date);
        root.read("seed", c.seed);
        root.read("threads", c.threads);
        root.read("out", c.out_dir);
        c.out_dir = resolve(base_dir, c.out_dir);

        {
            Section p = root.sub("prepare");
            p.read("case_lags", c.prepare.case_lags);
            p.read("graph_covariates", c.prepare.graph_covariates);
            if (const json* v = p.find("aggregators")) {
                c.prepare.aggregators.clear();
                for (const auto& name : p.as<std::vector<std::string>>(*v, "aggregators")) {
                    const auto a = aggregator_from_name(name);
                    if (!a) {
                        throw ConfigError("unknown aggregator '" + name + "' in 'prepare.aggregators'");
                    }
                    c.prepare.aggregators.push_back(*a);
                }
            }
        }
        {
            Section l = root.sub("loss");
            if (l.has("lambda_Y")) {
                Section y = l.sub("lambda_Y");
                for (Observed o : all_observed()) {
                    y.read(std::string(observed_name(o)), c.loss.lambda_Y[static_cast<std::size_t>(o)]);
                }
            } else {
                l.find("lambda_Y");
            }
            l.read("z", c.loss.z);
            l.read("lambda_comp", c.loss.lambda_comp);
            l.read("lambda_smooth", c.loss.lambda_smooth);
            l.read("lambda_ls", c.loss.lambda_ls);
            std::string kind = c.loss.kind == LossKind::quantile ? "quantile" : "squared";
            l.read("kind", kind);
            if (kind != "squared" && kind != "quantile") {
                throw ConfigError("loss.kind must be 'squared' or 'quantile'");
            }
            c.loss.kind = kind == "quantile" ? LossKind::quantile : LossKind::squared;
            l.read("quantiles", c.loss.quantiles);
            l.read("strict", c.loss.strict);
        }
        {
            Section o = root.sub("optimizer");
            o.read("learning_rate", c.optimizer.learning_rate);
            o.read("rms_decay", c.optimizer.rms_decay);
            o.read("epsilon", c.optimizer.epsilon);
            o.read("max_iterations", c.optimizer.max_iterations);
            o.read("fine_tune_iterations", c.optimizer.fine_tune_iterations);
            o.read("patience", c.optimizer.patience);
            o.read("final_lr_fraction", c.optimizer.final_lr_fraction);
        }
        root.read("lambda_tf", c.lambda_tf);
        root.read("zeta", c.zeta);
        root.read("head_iterations", c.head_iterations);
        root.read("head_learning_rate", c.head_learning_rate);
        {
            Section e = root.sub("encoders");
            e.read("lag_depth", c.encoders.lag_depth);
            if (e.has("time_varying")) {
                c.encoders.time_varying = read_wiring(e, "time_varying");
            } else {
                e.find("time_varying");
            }
            c.encoders.statics = read_wiring(e, "statics");
            if (const json* b = e.find("bounds")) {
                if (!b->is_object()) {
                    throw ConfigError("'encoders.bounds' must be an object");
                }
                for (const auto& [name, v] : b->items()) {
                    const auto pair = e.as<std::array<double, 2>>(v, "bounds." + name);
                    c.encoders.bounds[rate_key(name, "encoders.bounds")] = {pair[0], pair[1]};
                }
            }
            if (const json* r = e.find("initial_rates")) {
                if (!r->is_object()) {
                    throw ConfigError("'encoders.initial_rates' must be an object");
                }
                for (const auto& [name, v] : r->items()) {
                    c.encoders.initial_rates[rate_key(name, "encoders.initial_rates")] =
                        e.as<double>(v, "initial_rates." + name);
                }
            }
        }
        {
            Section s = root.sub("search");
            s.read("trials", c.search.trials);
            read_range(s, "learning_rate", c.search.space.learning_rate);
            read_range(s, "z", c.search.space.z);
            read_range(s, "lambda_comp", c.search.space.lambda_comp);
            read_range(s, "lambda_smooth", c.search.space.lambda_smooth);
            read_range(s, "lambda_ls", c.search.space.lambda_ls);
        }
        {
            Section f = root.sub("fairness");
            f.read("covariates", c.fairness.covariates);
            f.read("bins", c.fairness.bins);
            f.read("bootstrap_samples", c.fairness.bootstrap_samples);
            if (const json* v = f.find("metrics")) {
                c.fairness.metrics.clear();
                for (const auto& name : f.as<std::vector<std::string>>(*v, "metrics")) {
                    c.fairness.metrics.push_back(parse_fairness_metric(name));
                }
            }
        }
        {
            Section s = root.sub("simulate");
            s.read("days", c.simulate.days);
            s.read("population", c.simulate.population);
            if (const json* v = s.find("initial")) {
                if (!v->is_object()) {
                    throw ConfigError("'simulate.initial' must be an object");
                }
                c.simulate.initial.clear();
                for (const auto& [name, x] : v->items()) {
                    c.simulate.initial[compartment_key(name, "simulate.initial")] = s.as<double>(x, "initial." + name);
                }
            }
            if (const json* v = s.find("rates")) {
                if (!v->is_object()) {
                    throw ConfigError("'simulate.rates' must be an object");
                }
                for (const auto& [name, x] : v->items()) {
                    c.simulate.rates[rate_key(name, "simulate.rates")] = s.as<double>(x, "rates." + name);
                }
            }
        }
        {
            Section g = root.sub("gradcheck");
            g.read("locations", c.gradcheck.locations);
            g.read("days", c.gradcheck.days);
            g.read("horizon", c.gradcheck.horizon);
            g.read("step", c.gradcheck.step);
            g.read("tolerance", c.gradcheck.tolerance);
        }
        {
            Section s = root.sub("synthetic");
            s.read("locations", c.synthetic.locations);
            s.read("days", c.synthetic.days);
            s.read("seed", c.synthetic.seed);
            s.read("noise", c.synthetic.noise);
            s.read("anchor_date", c.synthetic.anchor_date);
            s.read("burn_in_days", c.synthetic.burn_in_days);
            s.read("transmission_scale", c.synthetic.transmission_scale);
            s.read("recovered_gap_every", c.synthetic.recovered_gap_every);
            std::string lvl = std::string(level_name(c.synthetic.level));
            s.read("level", lvl);
            c.synthetic.level = parse_level(lvl);
        }
    }
    if (!unknown.empty()) {
        std::sort(unknown.begin(), unknown.end());
        throw ConfigError("unknown config key '" + unknown.front() + "'");
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read config file '" + path.string() + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config(text.str(), path.parent_path());
}

void apply_overrides(RunConfig& config, const Overrides& o) {
    if (o.horizon) {
        config.horizon = *o.horizon;
    }
    if (o.level) {
        config.level = parse_level(*o.level);
    }
    if (o.seed) {
        config.seed = *o.seed;
    }
    if (o.threads) {
        config.threads = *o.threads;
    }
    if (o.quantiles) {
        config.loss.kind = LossKind::quantile;
        config.loss.quantiles = parse_quantile_list(*o.quantiles);
    }
    if (o.strict) {
        config.loss.strict = true;
    }
    if (o.out_dir) {
        config.out_dir = *o.out_dir;
    }
    config.validate();
}

} // namespace epigam::cli
