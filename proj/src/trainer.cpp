#include "megc/trainer.hpp"

#include "megc/optimizer.hpp"
#include "megc/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace megc {

Tensor prepare_sample(const SkeletonSequence& s, const TrainConfig& cfg) {
    SkeletonSequence staged = cfg.center ? center_sequence(s, cfg.center_joint) : s;
    if (cfg.frames > 0) staged = resize_temporal(staged, cfg.frames);
    return staged.data;
}

PreparedDataset prepare_dataset(const Dataset& ds, const TrainConfig& cfg) {
    PreparedDataset out;
    out.samples.reserve(ds.samples.size());
    out.labels.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        out.samples.push_back(prepare_sample(s, cfg));
        out.labels.push_back(s.label);
    }
    for (size_t i = 1; i < out.samples.size(); ++i) {
        if (!out.samples[i].same_shape(out.samples[0])) {
            throw std::invalid_argument(
                "samples disagree on shape after preprocessing (" +
                shape_string(out.samples[i].shape()) + " vs " +
                shape_string(out.samples[0].shape()) + "); set frames= to resize");
        }
    }
    return out;
}

Tensor assemble_batch(const PreparedDataset& data, const std::vector<int>& indices) {
    if (indices.empty()) throw std::invalid_argument("assemble_batch: empty index list");
    const Tensor& first = data.samples[static_cast<size_t>(indices[0])];
    std::vector<int> shape;
    shape.push_back(static_cast<int>(indices.size()));
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor batch(shape);
    const std::int64_t block = first.size();
    for (size_t i = 0; i < indices.size(); ++i) {
        const Tensor& s = data.samples[static_cast<size_t>(indices[i])];
        std::memcpy(batch.data() + static_cast<std::int64_t>(i) * block, s.data(),
                    static_cast<size_t>(block) * sizeof(double));
    }
    return batch;
}

namespace {

int argmax_row(const Tensor& logits, int row) {
    const int k = logits.extent(1);
    int best = 0;
    for (int i = 1; i < k; ++i) {
        if (logits[static_cast<std::int64_t>(row) * k + i] >
            logits[static_cast<std::int64_t>(row) * k + best]) {
            best = i;
        }
    }
    return best;
}

}  // namespace

EvalResult evaluate(MeGcnModel& model, const PreparedDataset& data, int batch_size) {
    const int classes = model.config().num_classes;
    EvalResult res;
    res.confusion.assign(static_cast<size_t>(classes),
                         std::vector<long long>(static_cast<size_t>(classes), 0));
    if (data.samples.empty()) return res;
    long long correct = 0;
    for (size_t start = 0; start < data.samples.size(); start += static_cast<size_t>(batch_size)) {
        std::vector<int> idx;
        for (size_t i = start; i < std::min(start + static_cast<size_t>(batch_size),
                                            data.samples.size());
             ++i) {
            idx.push_back(static_cast<int>(i));
        }
        const Tensor logits = model.predict(assemble_batch(data, idx));
        for (size_t i = 0; i < idx.size(); ++i) {
            const int truth = data.labels[static_cast<size_t>(idx[i])];
            const int pred = argmax_row(logits, static_cast<int>(i));
            res.confusion[static_cast<size_t>(truth)][static_cast<size_t>(pred)] += 1;
            if (pred == truth) ++correct;
        }
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(data.samples.size());
    return res;
}

TrainResult train(MeGcnModel& model, const TrainConfig& original_config,
                  const PreparedDataset& train_data, const PreparedDataset& val_data,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
    if (train_data.samples.empty()) throw std::invalid_argument("train: empty dataset");
    const TrainConfig& cfg = original_config;
    SgdOptimizer opt(model.parameters(), cfg.opt);
    Rng rng(cfg.seed);

    const bool writing = !out_dir.empty();
    if (writing) std::filesystem::create_directories(out_dir);

    std::vector<int> order(train_data.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainResult result;
    for (int epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
        const double lr = lr_at_epoch(epoch, cfg.schedule);
        // Fisher-Yates with the run RNG; batch order is part of the seed
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.below(i));
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        long long correct = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() +
                                     static_cast<std::ptrdiff_t>(std::min(
                                         start + static_cast<size_t>(cfg.batch_size), order.size())));
            std::vector<int> labels;
            for (int i : idx) labels.push_back(train_data.labels[static_cast<size_t>(i)]);

            Tape tape;
            auto res = model.forward(tape, assemble_batch(train_data, idx), labels, true, rng);
            const double loss = tape.val(res.loss)[0];
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite loss " + std::to_string(loss) + " at epoch " +
                                   std::to_string(epoch) + ", batch starting " +
                                   std::to_string(start) + " (lr " + format_double(lr) + ")");
            }
            model.zero_grad();
            tape.backward(res.loss);
            opt.step(lr);

            loss_sum += loss * static_cast<double>(idx.size());
            const Tensor& logits = tape.val(res.logits);
            for (size_t i = 0; i < idx.size(); ++i) {
                if (argmax_row(logits, static_cast<int>(i)) == labels[i]) ++correct;
            }
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.train_loss = loss_sum / static_cast<double>(order.size());
        m.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        m.val_acc = val_data.samples.empty()
                        ? 0.0
                        : evaluate(model, val_data, cfg.batch_size).accuracy;
        result.history.push_back(m);
        if (on_epoch) on_epoch(m);

        if (m.val_acc > result.best_val_acc) {
            result.best_val_acc = m.val_acc;
            result.best_epoch = epoch;
            if (writing) save_checkpoint(model, original_config, out_dir / "best.ckpt");
        }
    }

    if (writing) {
        save_checkpoint(model, original_config, out_dir / "last.ckpt");
        write_csv(out_dir / "metrics.csv", metrics_csv(result.history));
    }
    return result;
}

std::vector<CsvRow> metrics_csv(const std::vector<EpochMetrics>& history) {
    std::vector<CsvRow> rows;
    rows.push_back({"epoch", "lr", "train_loss", "train_acc", "val_acc"});
    for (const auto& m : history) {
        rows.push_back({std::to_string(m.epoch), format_double(m.lr), format_double(m.train_loss),
                        format_double(m.train_acc), format_double(m.val_acc)});
    }
    return rows;
}

std::vector<CsvRow> confusion_csv(const EvalResult& eval) {
    std::vector<CsvRow> rows;
    for (const auto& row : eval.confusion) {
        CsvRow cells;
        for (long long v : row) cells.push_back(std::to_string(v));
        rows.push_back(std::move(cells));
    }
    return rows;
}

namespace {

constexpr char kCkptMagic[8] = {'M', 'E', 'G', 'C', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(bytes, 4);
}

void put_f64(std::ostream& os, double d) {
    const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(bytes, 8);
}

struct ByteReader {
    const unsigned char* p;
    size_t left;
    std::string origin;

    void need(size_t n) const {
        if (left < n) {
            throw IoError(IoError::Kind::truncated, "checkpoint truncated: " + origin);
        }
    }
    std::uint32_t u32() {
        need(4);
        const std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                                (static_cast<std::uint32_t>(p[1]) << 8) |
                                (static_cast<std::uint32_t>(p[2]) << 16) |
                                (static_cast<std::uint32_t>(p[3]) << 24);
        p += 4;
        left -= 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        p += 8;
        left -= 8;
        return std::bit_cast<double>(v);
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
};

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) put_u32(os, static_cast<std::uint32_t>(t.extent(a)));
    for (std::int64_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
}

}  // namespace

void save_checkpoint(MeGcnModel& model, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(IoError::Kind::io, "cannot open for write: " + path.string());
    os.write(kCkptMagic, 8);
    put_u32(os, 1);  // version
    const std::string config_text = serialize_train_config(cfg);
    put_u32(os, static_cast<std::uint32_t>(config_text.size()));
    os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));

    auto tensors = model.state_tensors();
    put_u32(os, static_cast<std::uint32_t>(tensors.size() + 1));
    for (auto& [name, t] : tensors) write_tensor(os, name, *t);
    write_tensor(os, "input_norm.initialized",
                 Tensor::scalar(model.norm_stats().initialized ? 1.0 : 0.0));
    if (!os) throw IoError(IoError::Kind::io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Kind::io, "cannot open checkpoint: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kCkptMagic, 8) != 0) {
        throw IoError(IoError::Kind::magic_mismatch, "not a MEGCCKPT file: " + path.string());
    }
    ByteReader r{bytes.data() + 8, bytes.size() - 8, path.string()};
    const std::uint32_t version = r.u32();
    if (version != 1) {
        throw IoError(IoError::Kind::bad_header,
                      "unsupported checkpoint version " + std::to_string(version));
    }
    const std::string config_text = r.str(r.u32());
    Checkpoint out;
    out.config = parse_train_config(config_text);
    if (out.config.model.joint_preset == "auto" || out.config.model.joints == 0) {
        throw IoError(IoError::Kind::bad_header,
                      "checkpoint config lacks a resolved joint preset: " + path.string());
    }

    const SkeletonGraph graph = preset_graph(out.config.model.joint_preset);
    out.model = build_variant(out.config.model.variant, out.config.model, graph);

    std::map<std::string, Tensor> loaded;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str(r.u32());
        const std::uint32_t rank = r.u32();
        std::vector<int> shape;
        std::int64_t numel = 1;
        for (std::uint32_t a = 0; a < rank; ++a) {
            shape.push_back(static_cast<int>(r.u32()));
            numel *= shape.back();
            if (numel > (1LL << 30)) {
                throw IoError(IoError::Kind::extent_overflow,
                              "tensor '" + name + "' too large in " + path.string());
            }
        }
        Tensor t(shape);
        for (std::int64_t j = 0; j < t.size(); ++j) t[j] = r.f64();
        loaded.emplace(name, std::move(t));
    }

    auto tensors = out.model->state_tensors();
    for (auto& [name, dst] : tensors) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw IoError(IoError::Kind::bad_header,
                          "checkpoint missing tensor '" + name + "': " + path.string());
        }
        if (!it->second.same_shape(*dst)) {
            throw IoError(IoError::Kind::bad_header,
                          "checkpoint tensor '" + name + "' shape " +
                              shape_string(it->second.shape()) + " incompatible with model " +
                              shape_string(dst->shape()));
        }
        *dst = std::move(it->second);
        loaded.erase(it);
    }
    auto flag = loaded.find("input_norm.initialized");
    if (flag == loaded.end()) {
        throw IoError(IoError::Kind::bad_header,
                      "checkpoint missing normalization state: " + path.string());
    }
    out.model->norm_stats().initialized = flag->second[0] != 0.0;
    loaded.erase(flag);
    if (!loaded.empty()) {
        throw IoError(IoError::Kind::bad_header, "checkpoint has unexpected tensor '" +
                                                     loaded.begin()->first + "': " + path.string());
    }
    return out;
}

}  // namespace megc
