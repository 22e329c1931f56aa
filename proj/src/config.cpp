#include "megc/config.hpp"

#include "megc/csv.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace megc {

namespace {

const std::vector<std::string> kKeys = {
    "variant",       "num_classes",  "input_channels", "joints",     "joint_preset",
    "channels",      "layers",       "reduction",      "dropout",    "residual",
    "mutual_mte",    "mutual_mfe",   "init_seed",      "base_lr",    "warmup_epochs",
    "milestones",    "lr_decay",     "epochs",         "momentum",   "weight_decay",
    "nesterov",      "batch_size",   "seed",           "frames",     "center",
    "center_joint"};

bool known_key(const std::string& k) {
    return std::find(kKeys.begin(), kKeys.end(), k) != kKeys.end();
}

int to_int(const std::string& v, int line) {
    try {
        size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("not an integer: '" + v + "'", line);
    }
}

std::uint64_t to_u64(const std::string& v, int line) {
    try {
        size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("not an unsigned integer: '" + v + "'", line);
    }
}

double to_double(const std::string& v, int line) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("not a number: '" + v + "'", line);
    }
}

bool to_bool(const std::string& v, int line) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("not a boolean: '" + v + "'", line);
}

std::vector<std::string> split(const std::string& v, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream is(v);
    while (std::getline(is, cur, sep)) parts.push_back(cur);
    return parts;
}

// "64,64s2,128" -> (c_out, stride) pairs
std::vector<std::pair<int, int>> parse_channel_list(const std::string& v, int line) {
    std::vector<std::pair<int, int>> outs;
    for (const std::string& item : split(v, ',')) {
        if (item.empty()) throw ConfigError("empty channel entry in '" + v + "'", line);
        const size_t s = item.find('s');
        if (s == std::string::npos) {
            outs.emplace_back(to_int(item, line), 1);
        } else {
            outs.emplace_back(to_int(item.substr(0, s), line),
                              to_int(item.substr(s + 1), line));
        }
    }
    if (outs.empty()) throw ConfigError("empty channel plan", line);
    return outs;
}

struct Assignment {
    std::string value;
    int line = 0;
};

struct PendingConfig {
    std::map<std::string, Assignment> values;
};

void set_value(PendingConfig& pending, const std::string& key, const std::string& value, int line,
               bool allow_duplicate) {
    if (!known_key(key)) throw ConfigError("unknown config key '" + key + "'", line);
    if (!allow_duplicate && pending.values.count(key)) {
        throw ConfigError("duplicate config key '" + key + "'", line);
    }
    pending.values[key] = Assignment{value, line};
}

std::vector<bool> parse_mutual(const std::string& v, size_t layer_count, int line) {
    if (v == "all") return {};
    std::vector<bool> flags(layer_count, false);
    if (v == "none") return flags;
    for (const std::string& item : split(v, ',')) {
        const int idx = to_int(item, line);
        if (idx < 1 || idx > static_cast<int>(layer_count)) {
            throw ConfigError("mutual layer index " + std::to_string(idx) + " outside 1.." +
                              std::to_string(layer_count), line);
        }
        flags[static_cast<size_t>(idx - 1)] = true;
    }
    return flags;
}

void apply_pending(TrainConfig& cfg, const PendingConfig& pending) {
    auto get = [&pending](const std::string& key) -> const Assignment* {
        auto it = pending.values.find(key);
        return it == pending.values.end() ? nullptr : &it->second;
    };

    if (auto* a = get("variant")) cfg.model.variant = variant_from_string(a->value);
    if (auto* a = get("num_classes")) cfg.model.num_classes = to_int(a->value, a->line);
    if (auto* a = get("input_channels")) cfg.model.input_channels = to_int(a->value, a->line);
    if (auto* a = get("joints")) cfg.model.joints = to_int(a->value, a->line);
    if (auto* a = get("joint_preset")) cfg.model.joint_preset = a->value;
    if (auto* a = get("reduction")) cfg.model.reduction = to_int(a->value, a->line);
    if (auto* a = get("channels")) {
        cfg.model.plan = chain_plan(cfg.model.input_channels, parse_channel_list(a->value, a->line));
        cfg.model.layers = static_cast<int>(cfg.model.plan.size());
    }
    if (auto* a = get("layers")) {
        const int k = to_int(a->value, a->line);
        if (k != static_cast<int>(cfg.model.plan.size())) {
            throw ConfigError("layers=" + a->value + " but channel plan has " +
                              std::to_string(cfg.model.plan.size()) + " entries", a->line);
        }
        cfg.model.layers = k;
    }
    if (auto* a = get("dropout")) cfg.model.dropout = to_double(a->value, a->line);
    if (auto* a = get("residual")) cfg.model.residual = to_bool(a->value, a->line);
    if (auto* a = get("mutual_mte")) {
        cfg.model.mutual_mte = parse_mutual(a->value, cfg.model.plan.size(), a->line);
    }
    if (auto* a = get("mutual_mfe")) {
        cfg.model.mutual_mfe = parse_mutual(a->value, cfg.model.plan.size(), a->line);
    }
    if (auto* a = get("init_seed")) cfg.model.init_seed = to_u64(a->value, a->line);

    if (auto* a = get("base_lr")) cfg.schedule.base_lr = to_double(a->value, a->line);
    if (auto* a = get("warmup_epochs")) cfg.schedule.warmup_epochs = to_int(a->value, a->line);
    if (auto* a = get("milestones")) {
        cfg.schedule.milestones.clear();
        if (a->value != "none") {
            for (const std::string& item : split(a->value, ',')) {
                cfg.schedule.milestones.push_back(to_int(item, a->line));
            }
        }
    }
    if (auto* a = get("lr_decay")) cfg.schedule.decay = to_double(a->value, a->line);
    if (auto* a = get("epochs")) cfg.schedule.total_epochs = to_int(a->value, a->line);

    if (auto* a = get("momentum")) cfg.opt.momentum = to_double(a->value, a->line);
    if (auto* a = get("weight_decay")) cfg.opt.weight_decay = to_double(a->value, a->line);
    if (auto* a = get("nesterov")) cfg.opt.nesterov = to_bool(a->value, a->line);

    if (auto* a = get("batch_size")) cfg.batch_size = to_int(a->value, a->line);
    if (auto* a = get("seed")) cfg.seed = to_u64(a->value, a->line);
    if (auto* a = get("frames")) cfg.frames = to_int(a->value, a->line);
    if (auto* a = get("center")) cfg.center = to_bool(a->value, a->line);
    if (auto* a = get("center_joint")) cfg.center_joint = to_int(a->value, a->line);

    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.schedule.total_epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.frames < 0) throw ConfigError("frames must be >= 0");
}

}  // namespace

TrainConfig default_train_config() {
    TrainConfig cfg;
    cfg.model = default_model_config(4, "auto");
    return cfg;
}

TrainConfig parse_train_config(const std::string& text) {
    PendingConfig pending;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        const size_t end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value'", lineno);
        auto trim = [](std::string s) {
            const size_t b = s.find_first_not_of(" \t");
            if (b == std::string::npos) return std::string();
            const size_t e = s.find_last_not_of(" \t");
            return s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key", lineno);
        set_value(pending, key, value, lineno, false);
    }
    TrainConfig cfg = default_train_config();
    apply_pending(cfg, pending);
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_train_config(text);
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must be key=value, got '" + assignment + "'");
    }
    PendingConfig pending;
    set_value(pending, assignment.substr(0, eq), assignment.substr(eq + 1), 0, true);
    apply_pending(cfg, pending);
}

std::string serialize_train_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "variant = " << variant_to_string(cfg.model.variant) << "\n";
    os << "num_classes = " << cfg.model.num_classes << "\n";
    os << "input_channels = " << cfg.model.input_channels << "\n";
    os << "joints = " << cfg.model.joints << "\n";
    os << "joint_preset = " << cfg.model.joint_preset << "\n";
    os << "channels = ";
    for (size_t i = 0; i < cfg.model.plan.size(); ++i) {
        if (i) os << ",";
        os << cfg.model.plan[i].c_out;
        if (cfg.model.plan[i].stride != 1) os << "s" << cfg.model.plan[i].stride;
    }
    os << "\n";
    os << "layers = " << cfg.model.layers << "\n";
    os << "reduction = " << cfg.model.reduction << "\n";
    os << "dropout = " << format_double(cfg.model.dropout) << "\n";
    os << "residual = " << (cfg.model.residual ? 1 : 0) << "\n";
    auto mutual_text = [](const std::vector<bool>& flags) {
        if (flags.empty()) return std::string("all");
        if (std::none_of(flags.begin(), flags.end(), [](bool b) { return b; })) {
            return std::string("none");
        }
        if (std::all_of(flags.begin(), flags.end(), [](bool b) { return b; })) {
            return std::string("all");
        }
        std::string out;
        for (size_t i = 0; i < flags.size(); ++i) {
            if (!flags[i]) continue;
            if (!out.empty()) out += ",";
            out += std::to_string(i + 1);
        }
        return out;
    };
    os << "mutual_mte = " << mutual_text(cfg.model.mutual_mte) << "\n";
    os << "mutual_mfe = " << mutual_text(cfg.model.mutual_mfe) << "\n";
    os << "init_seed = " << cfg.model.init_seed << "\n";
    os << "base_lr = " << format_double(cfg.schedule.base_lr) << "\n";
    os << "warmup_epochs = " << cfg.schedule.warmup_epochs << "\n";
    os << "milestones = ";
    if (cfg.schedule.milestones.empty()) {
        os << "none";
    } else {
        for (size_t i = 0; i < cfg.schedule.milestones.size(); ++i) {
            if (i) os << ",";
            os << cfg.schedule.milestones[i];
        }
    }
    os << "\n";
    os << "lr_decay = " << format_double(cfg.schedule.decay) << "\n";
    os << "epochs = " << cfg.schedule.total_epochs << "\n";
    os << "momentum = " << format_double(cfg.opt.momentum) << "\n";
    os << "weight_decay = " << format_double(cfg.opt.weight_decay) << "\n";
    os << "nesterov = " << (cfg.opt.nesterov ? 1 : 0) << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "frames = " << cfg.frames << "\n";
    os << "center = " << (cfg.center ? 1 : 0) << "\n";
    os << "center_joint = " << cfg.center_joint << "\n";
    return os.str();
}

}  // namespace megc
