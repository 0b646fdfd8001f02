#include "avt/data.hpp"

#include "avt/errors.hpp"
#include "avt/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace avt {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803u;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801u;

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(path + ": truncated header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be_u32(std::ostream& out, std::uint32_t x) {
    char b[4] = {static_cast<char>(x >> 24), static_cast<char>(x >> 16), static_cast<char>(x >> 8),
                 static_cast<char>(x)};
    out.write(b, 4);
}

std::vector<unsigned char> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(path + ": cannot open file");
    in.seekg(0, std::ios::end);
    auto n = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(static_cast<std::size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(buf.data()), n);
    if (!in) throw Error(path + ": read failed");
    return buf;
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error(images_path + ": cannot open file");
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw Error(labels_path + ": cannot open file");

    std::uint32_t img_magic = read_be_u32(imgs, images_path);
    if (img_magic != kIdxImageMagic)
        throw FormatError(images_path + ": bad image magic number");
    std::uint32_t n_images = read_be_u32(imgs, images_path);
    std::uint32_t rows = read_be_u32(imgs, images_path);
    std::uint32_t cols = read_be_u32(imgs, images_path);

    std::uint32_t lab_magic = read_be_u32(labs, labels_path);
    if (lab_magic != kIdxLabelMagic)
        throw FormatError(labels_path + ": bad label magic number");
    std::uint32_t n_labels = read_be_u32(labs, labels_path);

    if (n_images != n_labels)
        throw FormatError(images_path + ": image count " + std::to_string(n_images) +
                          " does not match label count " + std::to_string(n_labels));

    Dataset ds;
    ds.sample_shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
    ds.inputs.reserve(n_images);
    ds.labels.reserve(n_images);
    const std::size_t pix = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> buf(pix);
    int maxlab = -1;
    for (std::uint32_t i = 0; i < n_images; ++i) {
        imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pix));
        if (!imgs) throw Error(images_path + ": truncated image data");
        Tensor t(ds.sample_shape, 0.0);
        for (std::size_t p = 0; p < pix; ++p) t.v[p] = buf[p] / 255.0;
        ds.inputs.push_back(std::move(t));
        unsigned char lab = 0;
        labs.read(reinterpret_cast<char*>(&lab), 1);
        if (!labs) throw Error(labels_path + ": truncated label data");
        ds.labels.push_back(lab);
        maxlab = std::max(maxlab, static_cast<int>(lab));
    }
    ds.n_classes = maxlab + 1;
    ds.name = std::filesystem::path(images_path).stem().string();
    return ds;
}

Dataset load_cifar10(const std::string& directory) {
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(directory))
        if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());

    constexpr std::size_t kRecord = 3073;
    Dataset ds;
    ds.sample_shape = {3, 32, 32};
    ds.n_classes = 10;
    ds.name = "cifar10";
    for (const std::string& f : files) {
        std::vector<unsigned char> buf = read_all(f);
        if (buf.size() % kRecord != 0)
            throw FormatError(f + ": file length is not a multiple of 3073 bytes");
        const std::size_t n = buf.size() / kRecord;
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned char* rec = buf.data() + i * kRecord;
            if (rec[0] > 9) throw FormatError(f + ": label byte out of range 0..9");
            Tensor t(ds.sample_shape, 0.0);
            for (std::size_t p = 0; p < 3072; ++p) t.v[p] = rec[1 + p] / 255.0;
            ds.inputs.push_back(std::move(t));
            ds.labels.push_back(rec[0]);
        }
    }
    return ds;
}

Dataset synth_blobs(const BlobSpec& spec) {
    if (spec.n_classes < 1) throw ConfigError("blobs: n_classes must be >= 1");
    if (spec.input_dim < 1) throw ConfigError("blobs: input_dim must be >= 1");
    if (static_cast<int>(spec.class_centers.size()) != spec.n_classes)
        throw ConfigError("blobs: one center per class required");
    if (!(spec.noise_stddev > 0.0)) throw ConfigError("blobs: noise_stddev must be > 0");
    for (int a = 0; a < spec.n_classes; ++a) {
        if (static_cast<int>(spec.class_centers[static_cast<std::size_t>(a)].size()) != spec.input_dim)
            throw ConfigError("blobs: center dimension does not match input_dim");
        for (int b = 0; b < a; ++b)
            if (spec.class_centers[static_cast<std::size_t>(a)] ==
                spec.class_centers[static_cast<std::size_t>(b)])
                throw ConfigError("blobs: class centers must be distinct");
    }

    Dataset ds;
    ds.sample_shape = {spec.input_dim};
    ds.n_classes = spec.n_classes;
    ds.name = "blobs";
    Rng rng(spec.seed);
    for (int c = 0; c < spec.n_classes; ++c) {
        const auto& center = spec.class_centers[static_cast<std::size_t>(c)];
        for (int s = 0; s < spec.samples_per_class; ++s) {
            Tensor t(ds.sample_shape, 0.0);
            for (int d = 0; d < spec.input_dim; ++d) {
                double x = center[static_cast<std::size_t>(d)] + spec.noise_stddev * rng.gaussian();
                t.v[static_cast<std::size_t>(d)] = std::clamp(x, 0.0, 1.0);
            }
            ds.inputs.push_back(std::move(t));
            ds.labels.push_back(c);
        }
    }
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    int rows, cols;
    if (ds.sample_shape.size() == 3 && ds.sample_shape[0] == 1) {
        rows = ds.sample_shape[1];
        cols = ds.sample_shape[2];
    } else if (ds.sample_shape.size() == 1) {
        rows = 1;
        cols = ds.sample_shape[0];
    } else {
        throw FormatError("save_idx: only single-channel or flat datasets are representable");
    }
    for (int lab : ds.labels)
        if (lab < 0 || lab > 255) throw FormatError("save_idx: label does not fit in one byte");

    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error(images_path + ": cannot open for writing");
    write_be_u32(imgs, kIdxImageMagic);
    write_be_u32(imgs, static_cast<std::uint32_t>(ds.size()));
    write_be_u32(imgs, static_cast<std::uint32_t>(rows));
    write_be_u32(imgs, static_cast<std::uint32_t>(cols));
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    for (const Tensor& t : ds.inputs) {
        for (std::size_t p = 0; p < buf.size(); ++p) {
            double q = std::round(t.v[p] * 255.0);
            buf[p] = static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
        }
        imgs.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!imgs) throw Error(images_path + ": write failed");

    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw Error(labels_path + ": cannot open for writing");
    write_be_u32(labs, kIdxLabelMagic);
    write_be_u32(labs, static_cast<std::uint32_t>(ds.size()));
    for (int lab : ds.labels) {
        unsigned char b = static_cast<unsigned char>(lab);
        labs.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!labs) throw Error(labels_path + ": write failed");
}

Batch make_batch(const Dataset& ds, const std::vector<int>& indices) {
    std::vector<int> shape;
    shape.push_back(static_cast<int>(indices.size()));
    for (int d : ds.sample_shape) shape.push_back(d);
    Batch b;
    b.inputs = Tensor(std::move(shape), 0.0);
    const std::int64_t sz = shape_numel(ds.sample_shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor& src = ds.inputs[static_cast<std::size_t>(indices[i])];
        std::copy(src.v.begin(), src.v.end(),
                  b.inputs.v.begin() + static_cast<std::int64_t>(i) * sz);
        b.labels.push_back(ds.labels[static_cast<std::size_t>(indices[i])]);
    }
    b.indices = indices;
    return b;
}

std::vector<Batch> batches(const Dataset& ds, int batch_size, std::uint64_t seed, int epoch_index) {
    if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
    std::vector<int> perm(ds.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    Rng rng(seed ^ static_cast<std::uint64_t>(epoch_index));
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.below(i))]);

    std::vector<Batch> out;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(batch_size)) {
        std::size_t end = std::min(perm.size(), start + static_cast<std::size_t>(batch_size));
        out.push_back(make_batch(ds, std::vector<int>(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                                      perm.begin() + static_cast<std::ptrdiff_t>(end))));
    }
    return out;
}

BlobSpec blob_spec_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("blob spec: invalid JSON: ") + e.what());
    }
    BlobSpec s;
    try {
        s.n_classes = j.at("n_classes").get<int>();
        s.input_dim = j.at("input_dim").get<int>();
        s.class_centers = j.at("class_centers").get<std::vector<std::vector<double>>>();
        s.noise_stddev = j.at("noise_stddev").get<double>();
        s.samples_per_class = j.at("samples_per_class").get<int>();
        s.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("blob spec: ") + e.what());
    }
    return s;
}

std::string blob_spec_to_json_text(const BlobSpec& spec) {
    nlohmann::ordered_json j;
    j["n_classes"] = spec.n_classes;
    j["input_dim"] = spec.input_dim;
    j["class_centers"] = spec.class_centers;
    j["noise_stddev"] = spec.noise_stddev;
    j["samples_per_class"] = spec.samples_per_class;
    j["seed"] = spec.seed;
    return j.dump(2);
}

} // namespace avt
