#include "sscl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace sscl {

void Parameters::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
    for (std::size_t i = 0; i < extractor.size(); ++i) {
        fn(fmt::format("extractor.{}.weight", i), extractor[i].weight);
        fn(fmt::format("extractor.{}.bias", i), extractor[i].bias);
    }
    fn("classifier.weight", classifier.weight);
    fn("classifier.bias", classifier.bias);
    fn("projector.weight", projector.weight);
    fn("projector.bias", projector.bias);
}

void Parameters::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<Parameters*>(this)->for_each(
        [&](const std::string& name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
}

Parameters Parameters::zeros_like() const {
    Parameters z = *this;
    z.for_each([](const std::string&, Matrix& m) { m *= 0.0; });
    return z;
}

Parameters& Parameters::axpy(double scale, const Parameters& other) {
    std::vector<const Matrix*> src;
    other.visit([&](const std::string&, const Matrix& m) { src.push_back(&m); });
    std::size_t i = 0;
    for_each([&](const std::string& name, Matrix& m) {
        if (i >= src.size() || !m.same_shape(*src[i]))
            throw DimensionError("parameter shape mismatch at " + name);
        auto d = m.data();
        auto s = src[i]->data();
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += scale * s[j];
        ++i;
    });
    return *this;
}

namespace {

Linear gaussian_linear(std::size_t in, std::size_t out, Rng& rng) {
    Linear l{Matrix(in, out), Matrix(1, out)};
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (double& v : l.weight.data()) v = normal(rng);
    return l;
}

Matrix linear_forward(const Linear& l, const Matrix& x) { return add_bias(matmul(x, l.weight), l.bias); }

}  // namespace

ModelState init_model(const ModelConfig& config) {
    if (config.hidden.empty()) throw ParameterError("model needs at least one hidden layer");
    if (config.input_dim == 0 || config.proj_dim == 0) throw ParameterError("model dims must be positive");
    Rng rng = make_rng(config.seed, "model-init");
    ModelState m;
    std::size_t in = config.input_dim;
    for (std::size_t width : config.hidden) {
        m.params.extractor.push_back(gaussian_linear(in, width, rng));
        in = width;
    }
    m.params.classifier = Linear{Matrix(in, 0), Matrix(1, 0)};
    m.params.projector = gaussian_linear(in, config.proj_dim, rng);
    m.projector_bias = config.projector_bias;
    return m;
}

ForwardCache forward(const ModelState& m, const Matrix& x, unsigned heads) {
    if (x.cols() != m.input_dim())
        throw DimensionError(fmt::format("model input has {} columns, expected {}", x.cols(), m.input_dim()));
    ForwardCache c;
    c.input = x;
    const Matrix* h = &c.input;
    for (const auto& layer : m.params.extractor) {
        c.pre.push_back(linear_forward(layer, *h));
        c.post.push_back(relu(c.pre.back()));
        h = &c.post.back();
    }
    if (heads & kLogits) c.logits = linear_forward(m.params.classifier, *h);
    if (heads & kProjection) {
        c.projection = linear_forward(m.params.projector, *h);
        c.normalized = l2_normalize_rows(c.projection);
    }
    return c;
}

Matrix forward_logits(const ModelState& m, const Matrix& x) { return forward(m, x, kLogits).logits; }

NormalizeResult forward_projection(const ModelState& m, const Matrix& x) {
    return forward(m, x, kProjection).normalized;
}

Matrix extract_features(const ModelState& m, const Matrix& x) {
    auto c = forward(m, x, 0);
    return std::move(c.post.back());
}

Parameters backward(const ModelState& m, const ForwardCache& c, const Matrix* d_logits, const Matrix* d_f) {
    Parameters g = m.params.zeros_like();
    const Matrix& h = c.features();
    Matrix dh(h.rows(), h.cols());
    if (d_logits) {
        auto mg = matmul_backward(h, m.params.classifier.weight, *d_logits);
        g.classifier.weight = std::move(mg.db);
        g.classifier.bias = column_sums(*d_logits);
        dh += mg.da;
    }
    if (d_f) {
        Matrix dz = l2_normalize_backward(c.projection, *d_f);
        auto pg = matmul_backward(h, m.params.projector.weight, dz);
        g.projector.weight = std::move(pg.db);
        if (m.projector_bias) g.projector.bias = column_sums(dz);
        dh += pg.da;
    }
    for (std::size_t i = m.params.extractor.size(); i-- > 0;) {
        Matrix dpre = relu_backward(c.pre[i], dh);
        const Matrix& below = i == 0 ? c.input : c.post[i - 1];
        auto lg = matmul_backward(below, m.params.extractor[i].weight, dpre);
        g.extractor[i].weight = std::move(lg.db);
        g.extractor[i].bias = column_sums(dpre);
        if (i > 0) dh = std::move(lg.da);
    }
    return g;
}

ModelState expand_classifier(const ModelState& m, std::size_t new_classes, Rng& rng) {
    if (new_classes == 0) throw ParameterError("expand_classifier: new_classes must be >= 1");
    ModelState out = m;
    const std::size_t feat = m.feat_dim();
    const std::size_t old_k = m.params.classifier.weight.cols();
    const std::size_t k = old_k + new_classes;
    Matrix w(feat, k), b(1, k);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(feat)));
    for (std::size_t r = 0; r < feat; ++r)
        for (std::size_t c = 0; c < old_k; ++c) w(r, c) = m.params.classifier.weight(r, c);
    for (std::size_t c = old_k; c < k; ++c)
        for (std::size_t r = 0; r < feat; ++r) w(r, c) = normal(rng);
    for (std::size_t c = 0; c < old_k; ++c) b(0, c) = m.params.classifier.bias(0, c);
    out.params.classifier = Linear{std::move(w), std::move(b)};
    out.observed_classes = k;
    return out;
}

TeacherSnapshot snapshot(const ModelState& m) { return TeacherSnapshot(m); }

// ---- checkpoints ----------------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

void save_checkpoint(const ModelState& m, const std::filesystem::path& path) {
    std::ostringstream header;
    header << "sscl-checkpoint 1\n";
    header << "task_id = " << m.task_id << "\n";
    header << "observed_classes = " << m.observed_classes << "\n";
    header << "extractor_layers = " << m.params.extractor.size() << "\n";
    header << "projector_bias = " << (m.projector_bias ? 1 : 0) << "\n";
    m.params.visit([&](const std::string& name, const Matrix& mat) {
        header << "matrix " << name << " " << mat.rows() << " " << mat.cols() << "\n";
    });
    header << "end\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << header.str();
    m.params.visit([&](const std::string&, const Matrix& mat) {
        out.write(reinterpret_cast<const char*>(mat.data().data()),
                  static_cast<std::streamsize>(mat.size() * sizeof(double)));
    });
    if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "sscl-checkpoint 1") throw std::runtime_error("not a checkpoint: " + path.string());
    ModelState m;
    std::size_t layers = 0;
    struct Shape {
        std::string name;
        std::size_t rows, cols;
    };
    std::vector<Shape> shapes;
    while (std::getline(in, line) && line != "end") {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "matrix") {
            Shape s;
            ls >> s.name >> s.rows >> s.cols;
            shapes.push_back(s);
            continue;
        }
        std::string eq;
        ls >> eq;
        if (key == "task_id") ls >> m.task_id;
        else if (key == "observed_classes") ls >> m.observed_classes;
        else if (key == "extractor_layers") ls >> layers;
        else if (key == "projector_bias") ls >> m.projector_bias;
        else throw std::runtime_error("unknown checkpoint header key " + key);
    }
    m.params.extractor.resize(layers);
    std::size_t i = 0;
    m.params.for_each([&](const std::string& name, Matrix& mat) {
        if (i >= shapes.size() || shapes[i].name != name)
            throw std::runtime_error("checkpoint matrix order mismatch at " + name);
        std::vector<double> data(shapes[i].rows * shapes[i].cols);
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
        mat = Matrix(shapes[i].rows, shapes[i].cols, std::move(data));
        ++i;
    });
    return m;
}

}  // namespace sscl
