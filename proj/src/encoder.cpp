#include "mpd/encoder.hpp"

#include <cmath>
#include <cstdlib>

#include "mpd/errors.hpp"

namespace mpd {

using nlohmann::json;

namespace {

// FNV-1a, stable across platforms and standard libraries.
std::uint64_t fnv1a(std::uint64_t seed, const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

EncodeResult EncoderProvider::encode(const EncodeRequest& request) {
  calls_.fetch_add(1);
  EncodeResult r = do_encode(request);
  if (r.scores.size() != request.tokens.size()) {
    throw ContractError("encoder returned " + std::to_string(r.scores.size()) + " scores for " +
                        std::to_string(request.tokens.size()) + " requested tokens");
  }
  for (double s : r.scores) {
    if (!std::isfinite(s) || !(s > 0.0)) throw ContractError("encoder returned a non-positive token score");
  }
  if (expected_hidden_ != 0 && !request.empty_input && r.hidden.size() != expected_hidden_) {
    throw ContractError("encoder returned hidden size " + std::to_string(r.hidden.size()) +
                        ", expected " + std::to_string(expected_hidden_));
  }
  return r;
}

std::vector<EncoderProvider::Slot> EncoderProvider::batch_encode(std::span<const EncodeRequest> requests) {
  if (requests.empty()) throw ConfigError("batch_encode: empty request list");
  std::vector<Slot> out(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    try {
      out[i].result = encode(requests[i]);
    } catch (const std::exception& e) {
      out[i].error = std::current_exception();
      out[i].message = e.what();
    }
  }
  return out;
}

PackProvider::PackProvider(FeaturePack pack) : pack_(std::move(pack)) {
  for (std::size_t i = 0; i < pack_.records.size(); ++i) index_.emplace(pack_.records[i].id, i);
  expect_hidden_dim(pack_.hidden_dim);
}

EncodeResult PackProvider::do_encode(const EncodeRequest& request) {
  const std::size_t p = pack_.num_prompts();
  const std::size_t l = pack_.score_dim();
  if (request.prompt_index >= p) {
    throw NotFoundError("pack has no prompt " + std::to_string(request.prompt_index));
  }
  if (request.tokens != pack_.manifest.label_tokens) {
    throw ContractError("requested tokens differ from the pack's label-word axis");
  }
  EncodeResult r;
  const auto slice = [&](const std::vector<float>& v, std::size_t width) {
    const auto first = v.begin() + static_cast<std::ptrdiff_t>(request.prompt_index * width);
    return Vector(first, first + static_cast<std::ptrdiff_t>(width));
  };
  if (request.empty_input) {
    r.scores = slice(pack_.empty_scores, l);
    return r;
  }
  const auto it = index_.find(request.sample_id);
  if (it == index_.end()) throw NotFoundError("sample '" + request.sample_id + "' is not in the pack");
  const PackRecord& rec = pack_.records[it->second];
  r.hidden = slice(rec.features, pack_.hidden_dim);
  r.scores = slice(rec.scores, l);
  return r;
}

MockProvider::MockProvider(std::uint64_t seed, std::size_t hidden_dim)
    : seed_(seed), hidden_dim_(hidden_dim) {
  if (hidden_dim_ == 0) throw ConfigError("mock provider: hidden_dim must be >= 1");
  expect_hidden_dim(hidden_dim_);
}

EncodeResult MockProvider::do_encode(const EncodeRequest& request) {
  Rng rng(fnv1a(seed_, request.text));
  std::normal_distribution<double> gauss(0.0, 1.0);
  EncodeResult r;
  r.hidden.resize(hidden_dim_);
  for (double& h : r.hidden) h = gauss(rng);
  // Positive, probability-like scores for each requested token.
  r.scores.resize(request.tokens.size());
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    Rng token_rng(fnv1a(seed_ ^ fnv1a(0, request.tokens[i]), request.text));
    r.scores[i] = std::exp(gauss(token_rng) - 4.0);
  }
  return r;
}

void RemoteSettings::validate() const {
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    throw ConfigError("remote provider: endpoint must start with http:// or https://");
  }
  if (timeout_ms <= 0) throw ConfigError("remote provider: timeout_ms must be > 0");
  if (attempts < 1) throw ConfigError("remote provider: attempts must be >= 1");
  if (backoff_ms < 0) throw ConfigError("remote provider: backoff_ms must be >= 0");
  if (!auth_env.empty() && std::getenv(auth_env.c_str()) == nullptr) {
    throw ConfigError("remote provider: environment variable " + auth_env + " is not set");
  }
}

json encode_request_json(const EncodeRequest& request) {
  return {{"schema_version", kEncodeSchemaVersion},
          {"prompt", request.text},
          {"tokens", request.tokens},
          {"token_ids", request.token_ids}};
}

EncodeResult parse_encode_response(const std::string& body) {
  try {
    const json doc = json::parse(body);
    const int version = doc.at("schema_version").get<int>();
    if (version != kEncodeSchemaVersion) {
      throw TransportError("encode response uses schema version " + std::to_string(version) +
                           ", expected " + std::to_string(kEncodeSchemaVersion));
    }
    EncodeResult r;
    r.hidden = doc.at("hidden").get<Vector>();
    r.scores = doc.at("scores").get<Vector>();
    return r;
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed encode response: ") + e.what());
  }
}

std::unique_ptr<EncoderProvider> make_provider(const json& config) {
  try {
    const std::string kind = config.at("kind").get<std::string>();
    if (kind == "pack") return std::make_unique<PackProvider>(read_pack(config.at("path").get<std::string>()));
    if (kind == "mock") {
      return std::make_unique<MockProvider>(config.value("seed", std::uint64_t{0}),
                                            config.at("hidden_dim").get<std::size_t>());
    }
    if (kind == "remote") {
      RemoteSettings s;
      s.endpoint = config.at("endpoint").get<std::string>();
      s.auth_env = config.value("auth_env", std::string{});
      s.timeout_ms = config.value("timeout_ms", s.timeout_ms);
      s.attempts = config.value("attempts", s.attempts);
      s.backoff_ms = config.value("backoff_ms", s.backoff_ms);
      return std::make_unique<RemoteProvider>(s);
    }
    throw ConfigError("unknown provider kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed provider config: ") + e.what());
  }
}

std::string render_template(const std::string& tmpl, const std::string& text) {
  static const std::string kSlot = "{text}";
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = tmpl.find(kSlot, pos);
    if (hit == std::string::npos) break;
    out.append(tmpl, pos, hit - pos);
    out += text;
    pos = hit + kSlot.size();
  }
  out.append(tmpl, pos, std::string::npos);
  return out;
}

QueriedSample query_sample(EncoderProvider& provider, const DatasetManifest& manifest,
                           const std::string& sample_id, const std::string& text) {
  const std::size_t p = manifest.templates.size();
  const std::size_t l = manifest.label_tokens.size();
  if (p == 0) throw ConfigError("query_sample: no templates");
  QueriedSample out;
  for (std::size_t j = 0; j < p; ++j) {
    EncodeRequest req;
    req.text = render_template(manifest.templates[j], text);
    req.tokens = manifest.label_tokens;
    req.sample_id = sample_id;
    req.prompt_index = j;
    EncodeResult r = provider.encode(req);
    if (j == 0) {
      out.hidden = Matrix(p, r.hidden.size());
      out.scores = Matrix(p, l);
    }
    if (r.hidden.size() != out.hidden.cols()) {
      throw ContractError("hidden size changed between prompts of sample " + sample_id);
    }
    std::copy(r.hidden.begin(), r.hidden.end(), out.hidden.row(j).begin());
    std::copy(r.scores.begin(), r.scores.end(), out.scores.row(j).begin());
  }
  return out;
}

Matrix query_empty(EncoderProvider& provider, const DatasetManifest& manifest) {
  const std::size_t p = manifest.templates.size();
  Matrix out(p, manifest.label_tokens.size());
  for (std::size_t j = 0; j < p; ++j) {
    EncodeRequest req;
    req.text = render_template(manifest.templates[j], "");
    req.tokens = manifest.label_tokens;
    req.prompt_index = j;
    req.empty_input = true;
    const EncodeResult r = provider.encode(req);
    std::copy(r.scores.begin(), r.scores.end(), out.row(j).begin());
  }
  return out;
}

FeaturePack build_pack(EncoderProvider& provider, const DatasetManifest& manifest,
                       std::span<const LabeledText> samples, std::size_t hidden_dim) {
  FeaturePack pack;
  pack.manifest = manifest;
  pack.hidden_dim = hidden_dim;
  provider.expect_hidden_dim(hidden_dim);
  const Matrix empty = query_empty(provider, manifest);
  pack.empty_scores.assign(empty.data().begin(), empty.data().end());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string id = sample_id(manifest.dataset, manifest.split, i);
    const QueriedSample q = query_sample(provider, manifest, id, samples[i].text);
    pack.records.push_back({id, samples[i].label,
                            std::vector<float>(q.hidden.data().begin(), q.hidden.data().end()),
                            std::vector<float>(q.scores.data().begin(), q.scores.data().end())});
  }
  return pack;
}

}  // namespace mpd
