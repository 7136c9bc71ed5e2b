#include "olor/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "olor/csv.hpp"
#include "olor/errors.hpp"

namespace olor {

CliConfig default_config() {
    CliConfig cfg;

    cfg.run.upstream.kind = TaskKind::gaussian_clusters;
    cfg.run.upstream.num_classes = 3;
    cfg.run.upstream.dim = 2;
    cfg.run.upstream.samples_per_class = 100;
    cfg.run.upstream.seed = 7;

    cfg.run.downstream = derive_downstream(cfg.run.upstream, 1.0471975511965976, 0.3,
                                           /*remap_labels=*/false, /*seed=*/8);

    cfg.run.model.layer_sizes = {2, 32, 32, 32, 3};
    cfg.run.model.activation = Activation::tanh;
    cfg.run.model.loss = Loss::softmax_cross_entropy;

    cfg.run.method = Method::full;
    cfg.run.base_optimizer = BaseOptimizer::adam;

    cfg.run.penalty.iota1 = 0.01;
    cfg.run.penalty.iota2 = 0.0;
    cfg.run.penalty.gamma = 1.0;

    cfg.run.hyper.base_lr = 1e-3;

    cfg.run.schedule.kind = LrSchedule::Kind::cosine;
    cfg.run.schedule.floor_lr = 0.0;

    cfg.run.epochs = 30;
    cfg.run.pretrain_epochs = 100;
    cfg.run.batch_size = 32;
    cfg.run.seed = 1;
    return cfg;
}

// ---------------------------------------------------------------------------
// Presets: rollback level, curvature and method family tuned per scenario.
// ---------------------------------------------------------------------------

namespace {

struct Preset {
    const char* name;
    double iota1;
    double gamma;
    BaseOptimizer base;
};

constexpr Preset kPresets[] = {
    {"cifar100-vit-analog", 5e-3, 2.0, BaseOptimizer::adam},
    {"cifar100-cnn-analog", 5e-3, 2.0, BaseOptimizer::sgd},
    {"svhn-vit-analog", 5e-3, 2.0, BaseOptimizer::adam},
    {"svhn-cnn-analog", 1e-4, 2.0, BaseOptimizer::sgd},
    {"cub200-vit-analog", 5e-2, 2.0, BaseOptimizer::adam},
    {"cub200-cnn-analog", 1e-2, 2.0, BaseOptimizer::sgd},
    {"stanfordcars-vit-analog", 1e-2, 4.0, BaseOptimizer::adam},
    {"stanfordcars-cnn-analog", 1e-4, 2.0, BaseOptimizer::sgd},
    {"places-lt-vit-analog", 1e-1, 4.0, BaseOptimizer::adam},
    {"places-lt-cnn-analog", 1e-2, 4.0, BaseOptimizer::sgd},
    {"ip102-vit-analog", 1e-1, 1.0, BaseOptimizer::adam},
    {"ip102-cnn-analog", 5e-3, 1.0, BaseOptimizer::sgd},
    {"officehome-vit-analog", 1e-2, 1.0, BaseOptimizer::adam},
    {"officehome-cnn-analog", 1.0, 1.0, BaseOptimizer::sgd},
    {"pacs-vit-analog", 1e-1, 4.0, BaseOptimizer::adam},
    {"pacs-cnn-analog", 5e-2, 4.0, BaseOptimizer::sgd},
    {"coco2017-cnn-analog", 1e-2, 2.0, BaseOptimizer::sgd},
    {"ade20k-vit-analog", 1e-4, 1.0, BaseOptimizer::adam},
    {"pacs-supervised-analog", 1e-2, 2.0, BaseOptimizer::adam},
    {"pacs-openclip-analog", 1e-2, 2.0, BaseOptimizer::adam},
    {"pacs-mae-analog", 1e-2, 2.0, BaseOptimizer::adam},
};

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const Preset& preset : kPresets) names.emplace_back(preset.name);
    return names;
}

void apply_preset(CliConfig& cfg, const std::string& name) {
    for (const Preset& preset : kPresets) {
        if (name == preset.name) {
            cfg.run.penalty.iota1 = preset.iota1;
            cfg.run.penalty.iota2 = 0.0;
            cfg.run.penalty.gamma = preset.gamma;
            cfg.run.base_optimizer = preset.base;
            cfg.run.method =
                preset.base == BaseOptimizer::adam ? Method::olor_adam : Method::olor_sgd;
            return;
        }
    }
    std::string known;
    for (const Preset& preset : kPresets) {
        known += std::string(known.empty() ? "" : ", ") + preset.name;
    }
    throw ConfigError("unknown preset '" + name + "' (available: " + known + ")");
}

// ---------------------------------------------------------------------------
// Value parsers.
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& text) {
    const auto begin = text.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = text.find_last_not_of(" \t\r");
    return text.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(const std::string& where, const std::string& key,
                            const std::string& value, const std::string& expected) {
    throw ConfigError(where + ": key '" + key + "' expects " + expected + ", got '" + value + "'");
}

double parse_double(const std::string& where, const std::string& key, const std::string& value) {
    const char* text = value.c_str();
    char* end = nullptr;
    const double parsed = std::strtod(text, &end);
    if (end == text || *end != '\0' || !std::isfinite(parsed)) {
        bad_value(where, key, value, "a finite number");
    }
    return parsed;
}

std::int64_t parse_int(const std::string& where, const std::string& key,
                       const std::string& value) {
    const char* text = value.c_str();
    char* end = nullptr;
    const long long parsed = std::strtoll(text, &end, 10);
    if (end == text || *end != '\0') {
        bad_value(where, key, value, "an integer");
    }
    return parsed;
}

std::uint64_t parse_uint(const std::string& where, const std::string& key,
                         const std::string& value) {
    const char* text = value.c_str();
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(text, &end, 10);
    if (end == text || *end != '\0' || value.find('-') != std::string::npos) {
        bad_value(where, key, value, "a non-negative integer");
    }
    return parsed;
}

bool parse_bool(const std::string& where, const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    bad_value(where, key, value, "a boolean (true/false)");
}

std::vector<std::string> split_list(const std::string& where, const std::string& key,
                                    const std::string& value) {
    std::vector<std::string> items;
    std::stringstream stream(value);
    std::string item;
    while (std::getline(stream, item, ',')) {
        item = trim(item);
        if (item.empty()) {
            bad_value(where, key, value, "a comma-separated list without empty entries");
        }
        items.push_back(item);
    }
    if (items.empty()) {
        bad_value(where, key, value, "a non-empty comma-separated list");
    }
    return items;
}

std::vector<double> parse_double_list(const std::string& where, const std::string& key,
                                      const std::string& value) {
    std::vector<double> out;
    for (const std::string& item : split_list(where, key, value)) {
        out.push_back(parse_double(where, key, item));
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& where, const std::string& key,
                                const std::string& value) {
    std::vector<int> out;
    for (const std::string& item : split_list(where, key, value)) {
        out.push_back(static_cast<int>(parse_int(where, key, item)));
    }
    return out;
}

std::vector<std::uint64_t> parse_uint_list(const std::string& where, const std::string& key,
                                           const std::string& value) {
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(where, key, value)) {
        out.push_back(parse_uint(where, key, item));
    }
    return out;
}

Method parse_method(const std::string& where, const std::string& key, const std::string& value) {
    for (Method method : {Method::full, Method::linear, Method::l2sp, Method::olor_sgd,
                          Method::olor_adam, Method::wd_sgd}) {
        if (value == to_string(method)) return method;
    }
    bad_value(where, key, value, "one of full, linear, l2sp, olor-sgd, olor-adam, wd-sgd");
}

BaseOptimizer parse_base(const std::string& where, const std::string& key,
                         const std::string& value) {
    if (value == "sgd") return BaseOptimizer::sgd;
    if (value == "adam") return BaseOptimizer::adam;
    bad_value(where, key, value, "one of sgd, adam");
}

Activation parse_activation(const std::string& where, const std::string& key,
                            const std::string& value) {
    if (value == "tanh") return Activation::tanh;
    if (value == "relu") return Activation::relu;
    bad_value(where, key, value, "one of tanh, relu");
}

Loss parse_loss(const std::string& where, const std::string& key, const std::string& value) {
    if (value == "mse") return Loss::mse;
    if (value == "softmax-cross-entropy") return Loss::softmax_cross_entropy;
    bad_value(where, key, value, "one of mse, softmax-cross-entropy");
}

TaskKind parse_task_kind(const std::string& where, const std::string& key,
                         const std::string& value) {
    for (TaskKind kind :
         {TaskKind::gaussian_clusters, TaskKind::rotated_clusters, TaskKind::label_remap}) {
        if (value == to_string(kind)) return kind;
    }
    bad_value(where, key, value, "one of gaussian-clusters, rotated-clusters, label-remap");
}

LrSchedule::Kind parse_schedule_kind(const std::string& where, const std::string& key,
                                     const std::string& value) {
    if (value == "constant") return LrSchedule::Kind::constant;
    if (value == "cosine") return LrSchedule::Kind::cosine;
    if (value == "step-decay") return LrSchedule::Kind::step_decay;
    bad_value(where, key, value, "one of constant, cosine, step-decay");
}

const char* to_string(LrSchedule::Kind kind) {
    switch (kind) {
        case LrSchedule::Kind::constant: return "constant";
        case LrSchedule::Kind::cosine: return "cosine";
        case LrSchedule::Kind::step_decay: return "step-decay";
    }
    return "?";
}

/// Structural upstream fields shared with the derived downstream task.
void sync_downstream_structure(CliConfig& cfg) {
    cfg.run.downstream.num_classes = cfg.run.upstream.num_classes;
    cfg.run.downstream.dim = cfg.run.upstream.dim;
    cfg.run.downstream.samples_per_class = cfg.run.upstream.samples_per_class;
}

}  // namespace

void apply_assignment(CliConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where) {
    RunConfig& run = cfg.run;
    if (key == "preset") {
        apply_preset(cfg, value);
    } else if (key == "method") {
        run.method = parse_method(where, key, value);
    } else if (key == "base_optimizer") {
        run.base_optimizer = parse_base(where, key, value);
    } else if (key == "seed") {
        run.seed = parse_uint(where, key, value);
    } else if (key == "seeds") {
        cfg.seeds = parse_uint_list(where, key, value);
    } else if (key == "methods") {
        cfg.methods.clear();
        for (const std::string& item : split_list(where, key, value)) {
            cfg.methods.push_back(parse_method(where, key, item));
        }
    } else if (key == "epochs") {
        run.epochs = static_cast<int>(parse_int(where, key, value));
    } else if (key == "pretrain_epochs") {
        run.pretrain_epochs = static_cast<int>(parse_int(where, key, value));
    } else if (key == "batch_size") {
        run.batch_size = static_cast<int>(parse_int(where, key, value));
    } else if (key == "model.layers") {
        run.model.layer_sizes = parse_int_list(where, key, value);
    } else if (key == "model.activation") {
        run.model.activation = parse_activation(where, key, value);
    } else if (key == "model.loss") {
        run.model.loss = parse_loss(where, key, value);
    } else if (key == "upstream.kind") {
        run.upstream.kind = parse_task_kind(where, key, value);
    } else if (key == "upstream.classes") {
        run.upstream.num_classes = static_cast<int>(parse_int(where, key, value));
        sync_downstream_structure(cfg);
    } else if (key == "upstream.dim") {
        run.upstream.dim = static_cast<int>(parse_int(where, key, value));
        sync_downstream_structure(cfg);
    } else if (key == "upstream.samples_per_class") {
        run.upstream.samples_per_class = static_cast<int>(parse_int(where, key, value));
        sync_downstream_structure(cfg);
    } else if (key == "upstream.rotation") {
        run.upstream.rotation = parse_double(where, key, value);
    } else if (key == "upstream.offset") {
        run.upstream.offset = parse_double(where, key, value);
    } else if (key == "upstream.seed") {
        run.upstream.seed = parse_uint(where, key, value);
    } else if (key == "downstream.rotation") {
        run.downstream.rotation = parse_double(where, key, value);
    } else if (key == "downstream.offset") {
        run.downstream.offset = parse_double(where, key, value);
    } else if (key == "downstream.remap_labels") {
        run.downstream.kind = parse_bool(where, key, value) ? TaskKind::label_remap
                                                            : TaskKind::rotated_clusters;
    } else if (key == "downstream.seed") {
        run.downstream.seed = parse_uint(where, key, value);
    } else if (key == "penalty.iota1") {
        run.penalty.iota1 = parse_double(where, key, value);
    } else if (key == "penalty.iota2") {
        run.penalty.iota2 = parse_double(where, key, value);
    } else if (key == "penalty.gamma") {
        run.penalty.gamma = parse_double(where, key, value);
    } else if (key == "hyper.lr") {
        run.hyper.base_lr = parse_double(where, key, value);
    } else if (key == "hyper.momentum") {
        run.hyper.momentum = parse_double(where, key, value);
    } else if (key == "hyper.beta1") {
        run.hyper.beta1 = parse_double(where, key, value);
    } else if (key == "hyper.beta2") {
        run.hyper.beta2 = parse_double(where, key, value);
    } else if (key == "hyper.epsilon") {
        run.hyper.epsilon = parse_double(where, key, value);
    } else if (key == "hyper.weight_decay") {
        run.hyper.weight_decay = parse_double(where, key, value);
    } else if (key == "hyper.l2sp_alpha") {
        run.hyper.l2sp_alpha = parse_double(where, key, value);
    } else if (key == "hyper.head_lr_scale") {
        run.hyper.head_lr_scale = parse_double(where, key, value);
    } else if (key == "hyper.clip_norm") {
        run.hyper.clip_norm = parse_double(where, key, value);
    } else if (key == "schedule.kind") {
        run.schedule.kind = parse_schedule_kind(where, key, value);
    } else if (key == "schedule.floor_lr") {
        run.schedule.floor_lr = parse_double(where, key, value);
    } else if (key == "schedule.decay_factor") {
        run.schedule.decay_factor = parse_double(where, key, value);
    } else if (key == "schedule.decay_period") {
        run.schedule.decay_period = parse_int(where, key, value);
    } else if (key == "sweep.iota1") {
        cfg.sweep_iota1 = parse_double_list(where, key, value);
    } else if (key == "sweep.gamma") {
        cfg.sweep_gamma = parse_double_list(where, key, value);
    } else if (key == "rollback.steps") {
        cfg.rollback_steps = static_cast<int>(parse_int(where, key, value));
    } else if (key == "delay.theta") {
        cfg.delay_theta = parse_double_list(where, key, value);
    } else if (key == "delay.eta_grad") {
        cfg.delay_eta_grad = parse_double_list(where, key, value);
    } else if (key == "delay.lambda") {
        cfg.delay_lambda = parse_double_list(where, key, value);
    } else if (key == "pretrained_checkpoint") {
        cfg.pretrained_checkpoint = value;
    } else if (key == "finetuned_checkpoint") {
        cfg.finetuned_checkpoint = value;
    } else if (key == "dump_datasets") {
        cfg.dump_datasets = parse_bool(where, key, value);
    } else if (key == "grad_check.draws") {
        cfg.grad_check_draws = static_cast<int>(parse_int(where, key, value));
    } else if (key == "grad_check.epsilon") {
        cfg.grad_check_epsilon = parse_double(where, key, value);
    } else {
        throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

CliConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("config: cannot open '" + path + "'");
    }

    struct Assignment {
        std::string key;
        std::string value;
        int line;
    };
    std::vector<Assignment> assignments;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line.erase(comment);
        const std::string text = trim(line);
        if (text.empty()) continue;
        const auto equals = text.find('=');
        if (equals == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_number) +
                              ": expected 'key = value', got '" + text + "'");
        }
        const std::string key = trim(text.substr(0, equals));
        const std::string value = trim(text.substr(equals + 1));
        if (key.empty()) {
            throw ConfigError(path + ":" + std::to_string(line_number) + ": empty key");
        }
        assignments.push_back({key, value, line_number});
    }

    CliConfig cfg = default_config();
    // The preset seeds the baseline; explicit keys then override it whatever
    // their order in the file.
    for (const Assignment& a : assignments) {
        if (a.key == "preset") {
            apply_assignment(cfg, a.key, a.value, path + ":" + std::to_string(a.line));
        }
    }
    for (const Assignment& a : assignments) {
        if (a.key == "preset") continue;
        apply_assignment(cfg, a.key, a.value, path + ":" + std::to_string(a.line));
    }
    return cfg;
}

void validate(const CliConfig& cfg) {
    validate(cfg.run);
    if (cfg.seeds.empty()) {
        throw ConfigError("config: seeds list is empty");
    }
    if (cfg.methods.empty()) {
        throw ConfigError("config: methods list is empty");
    }
    if (cfg.rollback_steps < 1) {
        throw ConfigError("config: rollback.steps must be >= 1, got " +
                          std::to_string(cfg.rollback_steps));
    }
    if (cfg.sweep_iota1.empty() || cfg.sweep_gamma.empty()) {
        throw ConfigError("config: sweep grids must be non-empty");
    }
    for (double iota1 : cfg.sweep_iota1) {
        if (!(iota1 >= 0.0 && iota1 <= 1.0)) {
            throw ConfigError("config: sweep.iota1 values must lie in [0, 1], got " +
                              std::to_string(iota1));
        }
    }
    for (double gamma : cfg.sweep_gamma) {
        if (!(gamma > 0.0)) {
            throw ConfigError("config: sweep.gamma values must be positive, got " +
                              std::to_string(gamma));
        }
    }
    if (cfg.grad_check_draws < 1) {
        throw ConfigError("config: grad_check.draws must be >= 1, got " +
                          std::to_string(cfg.grad_check_draws));
    }
    if (!(cfg.grad_check_epsilon >= 1e-7 && cfg.grad_check_epsilon <= 1e-3)) {
        throw ConfigError("config: grad_check.epsilon must lie in [1e-7, 1e-3], got " +
                          std::to_string(cfg.grad_check_epsilon));
    }
}

namespace {

template <typename T, typename Fn>
std::string join(const std::vector<T>& items, Fn&& render) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += ",";
        out += render(items[i]);
    }
    return out;
}

}  // namespace

std::string render_config(const CliConfig& cfg) {
    const RunConfig& run = cfg.run;
    std::ostringstream out;
    out << "method = " << to_string(run.method) << '\n';
    out << "base_optimizer = " << to_string(run.base_optimizer) << '\n';
    out << "seed = " << run.seed << '\n';
    out << "seeds = " << join(cfg.seeds, [](std::uint64_t s) { return std::to_string(s); })
        << '\n';
    out << "methods = "
        << join(cfg.methods, [](Method m) { return std::string(to_string(m)); }) << '\n';
    out << "epochs = " << run.epochs << '\n';
    out << "pretrain_epochs = " << run.pretrain_epochs << '\n';
    out << "batch_size = " << run.batch_size << '\n';
    out << "model.layers = "
        << join(run.model.layer_sizes, [](int s) { return std::to_string(s); }) << '\n';
    out << "model.activation = " << to_string(run.model.activation) << '\n';
    out << "model.loss = " << to_string(run.model.loss) << '\n';
    out << "upstream.kind = " << to_string(run.upstream.kind) << '\n';
    out << "upstream.classes = " << run.upstream.num_classes << '\n';
    out << "upstream.dim = " << run.upstream.dim << '\n';
    out << "upstream.samples_per_class = " << run.upstream.samples_per_class << '\n';
    out << "upstream.rotation = " << format_double(run.upstream.rotation) << '\n';
    out << "upstream.offset = " << format_double(run.upstream.offset) << '\n';
    out << "upstream.seed = " << run.upstream.seed << '\n';
    out << "downstream.rotation = " << format_double(run.downstream.rotation) << '\n';
    out << "downstream.offset = " << format_double(run.downstream.offset) << '\n';
    out << "downstream.remap_labels = "
        << (run.downstream.kind == TaskKind::label_remap ? "true" : "false") << '\n';
    out << "downstream.seed = " << run.downstream.seed << '\n';
    out << "penalty.iota1 = " << format_double(run.penalty.iota1) << '\n';
    out << "penalty.iota2 = " << format_double(run.penalty.iota2) << '\n';
    out << "penalty.gamma = " << format_double(run.penalty.gamma) << '\n';
    out << "hyper.lr = " << format_double(run.hyper.base_lr) << '\n';
    out << "hyper.momentum = " << format_double(run.hyper.momentum) << '\n';
    out << "hyper.beta1 = " << format_double(run.hyper.beta1) << '\n';
    out << "hyper.beta2 = " << format_double(run.hyper.beta2) << '\n';
    out << "hyper.epsilon = " << format_double(run.hyper.epsilon) << '\n';
    out << "hyper.weight_decay = " << format_double(run.hyper.weight_decay) << '\n';
    out << "hyper.l2sp_alpha = " << format_double(run.hyper.l2sp_alpha) << '\n';
    out << "hyper.head_lr_scale = " << format_double(run.hyper.head_lr_scale) << '\n';
    out << "hyper.clip_norm = " << format_double(run.hyper.clip_norm) << '\n';
    out << "schedule.kind = " << to_string(run.schedule.kind) << '\n';
    out << "schedule.floor_lr = " << format_double(run.schedule.floor_lr) << '\n';
    out << "schedule.decay_factor = " << format_double(run.schedule.decay_factor) << '\n';
    out << "schedule.decay_period = " << run.schedule.decay_period << '\n';
    out << "sweep.iota1 = " << join(cfg.sweep_iota1, format_double) << '\n';
    out << "sweep.gamma = " << join(cfg.sweep_gamma, format_double) << '\n';
    out << "rollback.steps = " << cfg.rollback_steps << '\n';
    if (!cfg.delay_theta.empty()) {
        out << "delay.theta = " << join(cfg.delay_theta, format_double) << '\n';
    }
    if (!cfg.delay_eta_grad.empty()) {
        out << "delay.eta_grad = " << join(cfg.delay_eta_grad, format_double) << '\n';
    }
    if (!cfg.delay_lambda.empty()) {
        out << "delay.lambda = " << join(cfg.delay_lambda, format_double) << '\n';
    }
    if (!cfg.pretrained_checkpoint.empty()) {
        out << "pretrained_checkpoint = " << cfg.pretrained_checkpoint << '\n';
    }
    if (!cfg.finetuned_checkpoint.empty()) {
        out << "finetuned_checkpoint = " << cfg.finetuned_checkpoint << '\n';
    }
    out << "dump_datasets = " << (cfg.dump_datasets ? "true" : "false") << '\n';
    out << "grad_check.draws = " << cfg.grad_check_draws << '\n';
    out << "grad_check.epsilon = " << format_double(cfg.grad_check_epsilon) << '\n';
    return out.str();
}

}  // namespace olor
