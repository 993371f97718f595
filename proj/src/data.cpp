#include "fsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fsr {

void BiasedDataset::validate() const {
    const int n = size();
    if (static_cast<int>(clean_labels.size()) != n || static_cast<int>(observed_labels.size()) != n)
        throw ConfigError("dataset label arrays do not match row count");
    for (int i = 0; i < n; ++i) {
        if (observed_labels[i] < 0 || observed_labels[i] >= num_classes)
            throw ConfigError("observed label out of range at row " + std::to_string(i));
        if (clean_labels[i] < 0 || clean_labels[i] >= num_classes)
            throw ConfigError("clean label out of range at row " + std::to_string(i));
    }
}

BiasedDataset make_gaussian_clusters(int C, int per_class, int d, double spread,
                                     std::uint64_t seed, Split split) {
    if (C < 2 || per_class < 1 || d < 2) throw ConfigError("make_gaussian_clusters: bad shape");
    BiasedDataset ds;
    ds.num_classes = C;
    ds.split = split;
    ds.features = Matrix(C * per_class, d);
    ds.clean_labels.resize(C * per_class);
    ds.observed_labels.resize(C * per_class);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    int row = 0;
    for (int c = 0; c < C; ++c) {
        const double cx = std::cos(2.0 * M_PI * c / C);
        const double cy = std::sin(2.0 * M_PI * c / C);
        for (int i = 0; i < per_class; ++i, ++row) {
            double* x = ds.features.row(row);
            x[0] = cx + spread * gauss(rng);
            x[1] = cy + spread * gauss(rng);
            for (int k = 2; k < d; ++k) x[k] = spread * gauss(rng);
            ds.clean_labels[row] = c;
            ds.observed_labels[row] = c;
        }
    }
    return ds;
}

namespace {

std::vector<int> pick_noise_rows(int n, double ratio, std::mt19937_64& rng) {
    if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("noise ratio must be in [0,1)");
    std::vector<int> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<int>(ratio * n));
    return rows;
}

} // namespace

BiasedDataset inject_uniform_noise(const BiasedDataset& ds, double ratio, std::uint64_t seed) {
    if (ds.split == Split::test) throw ConfigError("refusing to corrupt a test split");
    BiasedDataset out = ds;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> other(0, ds.num_classes - 2);
    for (int row : pick_noise_rows(ds.size(), ratio, rng)) {
        int label = other(rng);
        if (label >= out.clean_labels[row]) ++label; // resample among the other C-1 classes
        out.observed_labels[row] = label;
    }
    return out;
}

BiasedDataset inject_asymmetric_noise(const BiasedDataset& ds, double ratio,
                                      const std::vector<int>& confusion_map, std::uint64_t seed) {
    if (ds.split == Split::test) throw ConfigError("refusing to corrupt a test split");
    if (static_cast<int>(confusion_map.size()) != ds.num_classes)
        throw ConfigError("confusion map must cover all " + std::to_string(ds.num_classes) + " classes");
    for (int c : confusion_map)
        if (c < 0 || c >= ds.num_classes) throw ConfigError("confusion map target out of range");
    BiasedDataset out = ds;
    std::mt19937_64 rng(seed);
    for (int row : pick_noise_rows(ds.size(), ratio, rng))
        out.observed_labels[row] = confusion_map[ds.clean_labels[row]];
    return out;
}

std::vector<int> cyclic_confusion_map(int C) {
    std::vector<int> map(C);
    for (int c = 0; c < C; ++c) map[c] = (c + 1) % C;
    return map;
}

BiasedDataset make_long_tailed(const BiasedDataset& ds, double mu, std::uint64_t seed) {
    if (mu < 1.0) throw ConfigError("imbalance ratio must be >= 1");
    if (mu == 1.0) return ds;
    const int C = ds.num_classes;
    std::vector<std::vector<int>> by_class(C);
    for (int i = 0; i < ds.size(); ++i) by_class[ds.observed_labels[i]].push_back(i);
    const std::size_t n_max = by_class[0].size();
    for (const auto& rows : by_class)
        if (rows.size() != n_max) throw ConfigError("make_long_tailed requires a balanced input");

    std::mt19937_64 rng(seed);
    std::vector<int> keep;
    for (int c = 0; c < C; ++c) {
        const int n_c = static_cast<int>(std::lround(
            static_cast<double>(n_max) * std::pow(mu, -static_cast<double>(c) / (C - 1))));
        if (n_c < 1)
            throw ConfigError("imbalance ratio leaves class " + std::to_string(c) + " empty");
        std::vector<int> rows = by_class[c];
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(n_c);
        keep.insert(keep.end(), rows.begin(), rows.end());
    }
    std::sort(keep.begin(), keep.end());

    BiasedDataset out;
    out.num_classes = C;
    out.split = ds.split;
    out.features = Matrix(static_cast<int>(keep.size()), ds.dim());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        std::copy_n(ds.features.row(keep[i]), ds.dim(), out.features.row(static_cast<int>(i)));
        out.clean_labels.push_back(ds.clean_labels[keep[i]]);
        out.observed_labels.push_back(ds.observed_labels[keep[i]]);
    }
    return out;
}

EpochSampler::EpochSampler(int n, std::uint64_t seed) : perm_(n), rng_(seed) {
    std::iota(perm_.begin(), perm_.end(), 0);
    std::shuffle(perm_.begin(), perm_.end(), rng_);
}

void EpochSampler::reshuffle() {
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    pos_ = 0;
    ++epoch_;
}

std::vector<int> EpochSampler::next(int b) {
    if (b < 1 || b > static_cast<int>(perm_.size()))
        throw ConfigError("batch size out of range");
    if (epoch_done()) reshuffle();
    const int take = std::min(b, static_cast<int>(perm_.size()) - pos_);
    std::vector<int> rows(perm_.begin() + pos_, perm_.begin() + pos_ + take);
    pos_ += take;
    return rows;
}

Batch make_batch(const BiasedDataset& ds, const std::vector<int>& rows) {
    Batch batch;
    batch.features = Matrix(static_cast<int>(rows.size()), ds.dim());
    batch.labels = Matrix(static_cast<int>(rows.size()), ds.num_classes);
    batch.indices = rows;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(ds.features.row(rows[i]), ds.dim(), batch.features.row(static_cast<int>(i)));
        batch.labels(static_cast<int>(i), ds.observed_labels[rows[i]]) = 1.0;
    }
    return batch;
}

std::vector<int> one_hot_argmax_rows(const Matrix& labels) {
    std::vector<int> out(labels.rows);
    for (int i = 0; i < labels.rows; ++i) {
        int best = 0;
        for (int c = 1; c < labels.cols; ++c)
            if (labels(i, c) > labels(i, best)) best = c;
        out[i] = best;
    }
    return out;
}

namespace {

void write_rows(std::ofstream& out, const BiasedDataset& ds, const char* split) {
    for (int i = 0; i < ds.size(); ++i) {
        for (int k = 0; k < ds.dim(); ++k) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", ds.features(i, k));
            out << buf << ',';
        }
        out << ds.clean_labels[i] << ',' << ds.observed_labels[i] << ',' << split << '\n';
    }
}

} // namespace

void save_csv(const std::string& path, const BiasedDataset& train, const BiasedDataset& test) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    const int d = train.dim();
    for (int k = 0; k < d; ++k) out << 'f' << k << ',';
    out << "clean_label,observed_label,split\n";
    write_rows(out, train, "train");
    write_rows(out, test, "test");
}

std::pair<BiasedDataset, BiasedDataset> load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw ParseError(path + ": empty file");

    std::vector<std::string> cols;
    {
        std::stringstream ss(header);
        std::string tok;
        while (std::getline(ss, tok, ',')) cols.push_back(tok);
    }
    int d = 0;
    while (d < static_cast<int>(cols.size()) && cols[d] == "f" + std::to_string(d)) ++d;
    if (d == 0) throw ParseError(path + ": no feature columns f0,...");
    const std::vector<std::string> tail = {"clean_label", "observed_label", "split"};
    for (std::size_t k = 0; k < tail.size(); ++k)
        if (d + k >= cols.size() || cols[d + k] != tail[k])
            throw ParseError(path + ": missing column " + tail[k]);

    struct Row {
        std::vector<double> x;
        int clean, observed;
        bool test;
    };
    std::vector<Row> rows;
    std::string line;
    int lineno = 1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        Row row;
        try {
            for (int k = 0; k < d; ++k) {
                if (!std::getline(ss, tok, ',')) throw ParseError("short row");
                row.x.push_back(std::stod(tok));
            }
            if (!std::getline(ss, tok, ',')) throw ParseError("short row");
            row.clean = std::stoi(tok);
            if (!std::getline(ss, tok, ',')) throw ParseError("short row");
            row.observed = std::stoi(tok);
            if (!std::getline(ss, tok, ',')) throw ParseError("short row");
            if (tok == "train") row.test = false;
            else if (tok == "test") row.test = true;
            else throw ParseError("bad split value '" + tok + "'");
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed row (" + e.what() + ")");
        }
        max_label = std::max({max_label, row.clean, row.observed});
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(path + ": no data rows");

    const int C = max_label + 1;
    auto build = [&](bool test) {
        BiasedDataset ds;
        ds.num_classes = C;
        ds.split = test ? Split::test : Split::train;
        std::vector<const Row*> sel;
        for (const Row& r : rows)
            if (r.test == test) sel.push_back(&r);
        ds.features = Matrix(static_cast<int>(sel.size()), d);
        for (std::size_t i = 0; i < sel.size(); ++i) {
            std::copy(sel[i]->x.begin(), sel[i]->x.end(), ds.features.row(static_cast<int>(i)));
            ds.clean_labels.push_back(sel[i]->clean);
            ds.observed_labels.push_back(sel[i]->observed);
        }
        ds.validate();
        return ds;
    };
    return {build(false), build(true)};
}

} // namespace fsr
