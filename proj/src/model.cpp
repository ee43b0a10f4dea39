#include "agft/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "agft/error.hpp"

namespace agft {

std::vector<Tensor> DualEncoder::parameters() const {
  std::vector<Tensor> out;
  out.reserve(layers.size() * 2);
  for (const Linear& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void DualEncoder::set_parameters(std::vector<Tensor> params) {
  if (params.size() != layers.size() * 2) {
    throw ContractViolation("set_parameters: expected " + std::to_string(layers.size() * 2) +
                            " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (params[2 * i].shape() != layers[i].weight.shape() ||
        params[2 * i + 1].shape() != layers[i].bias.shape()) {
      throw ContractViolation("set_parameters: shape mismatch at layer " + std::to_string(i));
    }
    layers[i].weight = std::move(params[2 * i]);
    layers[i].bias = std::move(params[2 * i + 1]);
  }
}

namespace {

void normalize_rows(Tensor& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::span<double> r = m.row(i);
    double s = 0.0;
    for (double v : r) s += v * v;
    const double n = std::sqrt(s);
    for (double& v : r) v /= n;
  }
}

}  // namespace

DualEncoder make_dual_encoder(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.input_dim == 0 || spec.embed_dim == 0 || spec.num_classes == 0) {
    throw ContractViolation("model dimensions must be positive");
  }
  if (!(spec.tau > 0.0)) throw ContractViolation("tau must be positive");
  std::mt19937_64 rng(seed);
  DualEncoder model;
  model.tau = spec.tau;
  model.seed = seed;

  std::vector<std::size_t> dims{spec.input_dim};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.embed_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(dims[l])));
    Linear layer{Tensor(Shape{dims[l], dims[l + 1]}), Tensor(Shape{dims[l + 1]})};
    for (double& w : layer.weight.data()) w = init(rng);
    model.layers.push_back(std::move(layer));
  }

  // Gram-Schmidt on Gaussian rows.
  const std::size_t k = spec.num_classes, d = spec.embed_dim;
  Tensor protos(Shape{k, d});
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : protos.data()) v = gauss(rng);
  if (k <= d) {
    for (std::size_t i = 0; i < k; ++i) {
      std::span<double> ri = protos.row(i);
      for (std::size_t j = 0; j < i; ++j) {
        std::span<const double> rj = std::as_const(protos).row(j);
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += ri[c] * rj[c];
        for (std::size_t c = 0; c < d; ++c) ri[c] -= dot * rj[c];
      }
      double s = 0.0;
      for (double v : ri) s += v * v;
      const double n = std::sqrt(s);
      for (double& v : ri) v /= n;
    }
  }
  normalize_rows(protos);
  model.text_prototypes = std::move(protos);
  return model;
}

void validate(const DualEncoder& model) {
  if (model.layers.empty()) throw ContractViolation("model has no encoder layers");
  if (!(model.tau > 0.0)) throw ContractViolation("model tau must be positive");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Linear& layer = model.layers[l];
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 ||
        layer.bias.size() != layer.weight.cols()) {
      throw ContractViolation("malformed encoder layer " + std::to_string(l));
    }
    if (l > 0 && model.layers[l - 1].weight.cols() != layer.weight.rows()) {
      throw ContractViolation("encoder layer " + std::to_string(l) + " input width mismatch");
    }
  }
  if (model.text_prototypes.rank() != 2 ||
      model.text_prototypes.cols() != model.layers.back().weight.cols()) {
    throw ContractViolation("text prototypes do not match the embedding width");
  }
  for (std::size_t i = 0; i < model.text_prototypes.rows(); ++i) {
    double s = 0.0;
    for (double v : model.text_prototypes.row(i)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-9) {
      throw ContractViolation("text prototype row " + std::to_string(i) + " is not unit norm");
    }
  }
}

std::vector<Var> EncoderVars::all() const {
  std::vector<Var> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

EncoderVars bind_parameters(Tape& tape, const DualEncoder& model, bool trainable) {
  EncoderVars vars;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Linear& l = model.layers[i];
    if (trainable) {
      vars.weights.push_back(tape.leaf(l.weight, "encoder." + std::to_string(i) + ".weight"));
      vars.biases.push_back(tape.leaf(l.bias, "encoder." + std::to_string(i) + ".bias"));
    } else {
      vars.weights.push_back(tape.constant(l.weight));
      vars.biases.push_back(tape.constant(l.bias));
    }
  }
  return vars;
}

Var encode_image(const EncoderVars& params, Var batch) {
  const std::size_t in = params.weights.front().value().rows();
  if (batch.value().rank() != 2 || batch.value().cols() != in) {
    throw ContractViolation("encode_image: batch shape " + shape_string(batch.shape()) +
                            " does not match input width " + std::to_string(in));
  }
  Var h = batch;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    h = add_bias(matmul(h, params.weights[i]), params.biases[i]);
    if (i + 1 < params.weights.size()) h = relu(h);
  }
  return row_l2_normalize(h);
}

Tensor encode_image(const DualEncoder& model, const Tensor& batch) {
  Tape tape;
  EncoderVars params = bind_parameters(tape, model, false);
  return encode_image(params, tape.constant(batch)).value();
}

Var similarity_matrix(Var img_emb, const Tensor& txt_emb) {
  if (img_emb.value().rank() != 2 || txt_emb.rank() != 2 ||
      img_emb.value().cols() != txt_emb.cols()) {
    throw ContractViolation("similarity_matrix: dimension mismatch " +
                            shape_string(img_emb.shape()) + " vs " + shape_string(txt_emb.shape()));
  }
  Tensor txt_t(Shape{txt_emb.cols(), txt_emb.rows()});
  for (std::size_t j = 0; j < txt_emb.rows(); ++j)
    for (std::size_t c = 0; c < txt_emb.cols(); ++c) txt_t.at(c, j) = txt_emb.at(j, c);
  return matmul(img_emb, img_emb.tape->constant(std::move(txt_t)));
}

Tensor similarity_matrix(const Tensor& img_emb, const Tensor& txt_emb) {
  Tape tape;
  return similarity_matrix(tape.constant(img_emb), txt_emb).value();
}

Var class_log_probs(Var similarities, double tau) {
  if (!(tau > 0.0)) throw ContractViolation("tau must be positive");
  return log_softmax_rows(scale(similarities, 1.0 / tau));
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    std::span<double> r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : r) v /= s;
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::span<const double> r = m.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

std::vector<std::size_t> argmin_rows(const Tensor& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::span<const double> r = m.row(i);
    out[i] = static_cast<std::size_t>(std::min_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

Prediction predict_distribution(const DualEncoder& model, const Tensor& batch, double tau) {
  if (!(tau > 0.0)) throw ContractViolation("predict_distribution: tau must be positive");
  Prediction p;
  p.similarities = similarity_matrix(encode_image(model, batch), model.text_prototypes);
  Tensor logits = p.similarities;
  for (double& v : logits.data()) v /= tau;
  p.distribution = softmax_rows(logits);
  p.top_class = argmax_rows(p.distribution);
  return p;
}

std::optional<std::vector<double>> relative_similarity_shares(std::span<const double> row) {
  double s = 0.0;
  for (double v : row) s += v;
  if (std::abs(s) <= 1e-6) return std::nullopt;
  std::vector<double> out(row.begin(), row.end());
  for (double& v : out) v /= s;
  return out;
}

std::uint64_t parameter_checksum(const DualEncoder& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const Linear& l : model.layers) {
    for (double v : l.weight.data()) mix(v);
    for (double v : l.bias.data()) mix(v);
  }
  for (double v : model.text_prototypes.data()) mix(v);
  mix(model.tau);
  return h;
}

}  // namespace agft
