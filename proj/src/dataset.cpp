#include "eenn/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "eenn/artifacts.hpp"
#include "eenn/error.hpp"
#include "eenn/rng.hpp"

namespace eenn {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace

std::vector<std::size_t> Dataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
        if (splits[i] == split) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Dataset::histogram(std::optional<Split> split) const {
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (split && splits[i] != *split) continue;
        ++counts[static_cast<std::size_t>(labels[i])];
    }
    return counts;
}

Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> classes) {
    std::ifstream in(path);
    if (!in) throw Error("io_error", "cannot open dataset " + path.string(), {{"path", path.string()}});

    std::string line;
    if (!std::getline(in, line)) throw Error("schema_error", "dataset is empty", {{"path", path.string()}});
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_commas(line);
    if (header.size() < 2) throw Error("schema_error", "dataset header needs label and at least one feature");
    if (header[0] != "label") {
        throw Error("schema_error", "dataset column 0 must be 'label', found '" + std::string(header[0]) + "'",
                    {{"column", 0}, {"found", header[0]}, {"expected", "label"}});
    }
    for (std::size_t j = 1; j < header.size(); ++j) {
        const std::string expected = "f" + std::to_string(j - 1);
        if (header[j] != expected) {
            throw Error("schema_error",
                        "dataset column " + std::to_string(j) + " must be '" + expected + "', found '" +
                            std::string(header[j]) + "'",
                        {{"column", j}, {"found", header[j]}, {"expected", expected}});
        }
    }
    const std::size_t dim = header.size() - 1;

    std::vector<double> values;
    std::vector<long> raw_labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_commas(line);
        auto malformed = [&](const std::string& why) {
            return Error("schema_error", "malformed row at line " + std::to_string(line_no) + ": " + why,
                         {{"line", line_no}, {"path", path.string()}});
        };
        if (fields.size() != header.size()) {
            throw malformed("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        long label = 0;
        auto [lp, le] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
        if (le != std::errc{} || lp != fields[0].data() + fields[0].size()) throw malformed("bad label");
        raw_labels.push_back(label);
        for (std::size_t j = 1; j < fields.size(); ++j) {
            double v = 0.0;
            auto [vp, ve] = std::from_chars(fields[j].data(), fields[j].data() + fields[j].size(), v);
            if (ve != std::errc{} || vp != fields[j].data() + fields[j].size() || !std::isfinite(v)) {
                throw malformed("bad value in column f" + std::to_string(j - 1));
            }
            values.push_back(v);
        }
    }
    if (raw_labels.empty()) throw Error("schema_error", "dataset has no rows", {{"path", path.string()}});

    long max_label = 0;
    for (long l : raw_labels) max_label = std::max(max_label, l);
    const std::size_t c = classes.value_or(static_cast<std::size_t>(std::max(max_label, 0L)));
    Dataset data;
    data.classes = c;
    data.labels.reserve(raw_labels.size());
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
        const long l = raw_labels[i];
        if (l < 1 || static_cast<std::size_t>(l) > c) {
            throw Error("label_error",
                        "label " + std::to_string(l) + " at line " + std::to_string(i + 2) + " outside 1.." +
                            std::to_string(c),
                        {{"line", i + 2}, {"label", l}, {"classes", c}});
        }
        data.labels.push_back(static_cast<int>(l - 1));
    }
    data.features = Tensor({raw_labels.size(), dim}, std::move(values));
    data.splits.assign(raw_labels.size(), Split::Train);
    return data;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", "cannot write dataset " + path.string(), {{"path", path.string()}});
    out << "label";
    for (std::size_t j = 0; j < data.dim(); ++j) out << ",f" << j;
    out << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << (data.labels[i] + 1);
        for (double v : data.features.row(i)) out << ',' << format_double(v);
        out << '\n';
    }
}

Dataset synth_blobs(std::uint64_t seed, const SynthSpec& spec) {
    if (spec.classes < 2) throw Error("schema_error", "synthetic data needs at least 2 classes");
    if (spec.dim == 0 || spec.per_class == 0) throw Error("schema_error", "synthetic dim and per_class must be positive");
    if (spec.coarse_groups == 0 || spec.coarse_groups > spec.classes) {
        throw Error("schema_error", "coarse_groups must be in 1..classes");
    }
    if (spec.spread < 0.0) throw Error("schema_error", "spread must be >= 0");
    if (spec.modes_per_class == 0) throw Error("schema_error", "modes_per_class must be positive");

    Rng rng(seed);
    if (spec.latent_dim > spec.dim) throw Error("schema_error", "latent_dim must not exceed dim");
    const std::size_t latent = spec.latent_dim == 0 ? spec.dim : spec.latent_dim;
    auto random_direction = [&](double length) {
        std::vector<double> v(spec.dim, 0.0);
        double norm = 0.0;
        for (std::size_t j = 0; j < latent; ++j) {
            v[j] = rng.normal();
            norm += v[j] * v[j];
        }
        norm = std::sqrt(norm);
        for (double& e : v) e *= length / norm;
        return v;
    };

    std::vector<std::vector<double>> groups;
    for (std::size_t g = 0; g < spec.coarse_groups; ++g) groups.push_back(random_direction(spec.coarse_scale));
    // centres[c * modes + k]
    const std::size_t modes = spec.modes_per_class;
    std::vector<std::vector<double>> centres;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t k = 0; k < modes; ++k) {
            auto offset = random_direction(spec.fine_scale);
            const auto& base = groups[c % spec.coarse_groups];
            for (std::size_t j = 0; j < spec.dim; ++j) offset[j] += base[j];
            centres.push_back(std::move(offset));
        }
    }

    Dataset data;
    data.classes = spec.classes;
    const std::size_t n = spec.classes * spec.per_class;
    data.features = Tensor({n, spec.dim});
    data.labels.reserve(n);
    std::size_t row = 0;
    for (std::size_t i = 0; i < spec.per_class; ++i) {
        for (std::size_t c = 0; c < spec.classes; ++c, ++row) {
            auto dst = data.features.row(row);
            const auto& centre = centres[c * modes + i % modes];
            for (std::size_t j = 0; j < spec.dim; ++j) dst[j] = centre[j] + spec.spread * rng.normal();
            data.labels.push_back(static_cast<int>(c));
        }
    }
    data.splits.assign(n, Split::Train);
    return data;
}

void assign_splits(Dataset& data, double test_fraction, double validation_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw Error("schema_error", "test_fraction must be in [0, 1)");
    if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
        throw Error("schema_error", "validation_fraction must be in (0, 0.5)");
    }
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(order.size())));
    const std::size_t rest = order.size() - n_test;
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(rest))));
    if (n_val >= rest) throw Error("schema_error", "dataset too small for the requested splits");
    for (std::size_t k = 0; k < order.size(); ++k) {
        Split s = Split::Train;
        if (k < n_test) {
            s = Split::Test;
        } else if (k >= order.size() - n_val) {
            s = Split::Val;
        }
        data.splits[order[k]] = s;
    }
    const auto hist = data.histogram(Split::Train);
    for (std::size_t c = 0; c < hist.size(); ++c) {
        if (hist[c] == 0) {
            throw Error("schema_error", "class " + std::to_string(c + 1) + " is missing from the train split",
                        {{"class", c + 1}});
        }
    }
}

SplitData take(const Dataset& data, Split split) {
    const auto idx = data.indices(split);
    SplitData out;
    if (idx.empty()) return out;
    out.x = data.features.select_rows(idx);
    out.y.reserve(idx.size());
    for (auto i : idx) out.y.push_back(data.labels[i]);
    return out;
}

}  // namespace eenn
