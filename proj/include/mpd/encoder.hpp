#pragma once

// Access to the black-box encoder. A provider answers one prompt-wrapped
// input with the mask-position hidden state and the probabilities of the
// requested label-word tokens. Three providers exist: a feature pack on
// disk, a remote HTTP endpoint, and a deterministic mock.
//
// Remote protocol (schema version 1), POST <endpoint>/v1/encode:
//   request  {"schema_version": 1, "prompt": "...",
//             "tokens": ["bad", ...], "token_ids": [1099, ...]}
//   response {"schema_version": 1, "hidden": [...], "scores": [...]}
// scores align with the requested tokens. token_ids may be empty when the
// caller has no vocabulary; servers then resolve `tokens`. An optional
// bearer token is sent as "Authorization: Bearer <value of auth_env>".
// A server that does not speak the requested version answers 400 with
// {"error": "..."}.

#include <atomic>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpd/feature_store.hpp"
#include "mpd/numerics.hpp"

namespace mpd {

inline constexpr int kEncodeSchemaVersion = 1;
inline constexpr const char* kEncodePath = "/v1/encode";

struct EncodeRequest {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<std::int64_t> token_ids;
  // Used by the pack provider, which looks vectors up by sample instead of
  // by text.
  std::string sample_id;
  std::size_t prompt_index = 0;
  bool empty_input = false;
};

struct EncodeResult {
  Vector hidden;  // empty for empty-input queries answered from a pack
  Vector scores;  // one per requested token, positive
};

class EncoderProvider {
 public:
  virtual ~EncoderProvider() = default;

  /// Throws NotFoundError, TransportError or ContractError.
  EncodeResult encode(const EncodeRequest& request);

  struct Slot {
    std::optional<EncodeResult> result;
    std::exception_ptr error;
    std::string message;
  };
  /// One slot per request, in order; a failing item does not abort the rest.
  std::vector<Slot> batch_encode(std::span<const EncodeRequest> requests);

  /// Number of encode calls issued so far (including failed ones).
  std::uint64_t calls() const noexcept { return calls_.load(); }

  /// Hidden size every answer must have; 0 disables the check.
  void expect_hidden_dim(std::size_t d) noexcept { expected_hidden_ = d; }

 protected:
  virtual EncodeResult do_encode(const EncodeRequest& request) = 0;

 private:
  std::atomic<std::uint64_t> calls_{0};
  std::size_t expected_hidden_ = 0;
};

/// Serves vectors stored in a feature pack.
class PackProvider final : public EncoderProvider {
 public:
  explicit PackProvider(FeaturePack pack);
  const FeaturePack& pack() const noexcept { return pack_; }

 protected:
  EncodeResult do_encode(const EncodeRequest& request) override;

 private:
  FeaturePack pack_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic pseudo-features derived from a hash of (seed, text).
class MockProvider final : public EncoderProvider {
 public:
  MockProvider(std::uint64_t seed, std::size_t hidden_dim);

 protected:
  EncodeResult do_encode(const EncodeRequest& request) override;

 private:
  std::uint64_t seed_;
  std::size_t hidden_dim_;
};

struct RemoteSettings {
  std::string endpoint;  // http://host:port
  std::string auth_env;  // environment variable holding a bearer token, optional
  int timeout_ms = 10000;
  int attempts = 3;
  int backoff_ms = 200;  // doubled after every failed attempt

  void validate() const;
};

class RemoteProvider final : public EncoderProvider {
 public:
  explicit RemoteProvider(RemoteSettings settings);
  ~RemoteProvider() override;

 protected:
  EncodeResult do_encode(const EncodeRequest& request) override;

 private:
  struct Impl;
  RemoteSettings settings_;
  std::string auth_token_;
  std::unique_ptr<Impl> impl_;
};

/// {"kind": "pack", "path": ...} | {"kind": "mock", "seed": 1, "hidden_dim": 16}
/// | {"kind": "remote", "endpoint": ..., "auth_env": ..., "timeout_ms": ...,
///    "attempts": ..., "backoff_ms": ...}
std::unique_ptr<EncoderProvider> make_provider(const nlohmann::json& config);

nlohmann::json encode_request_json(const EncodeRequest& request);
/// Throws TransportError on a schema-version mismatch or malformed body.
EncodeResult parse_encode_response(const std::string& body);

/// Substitutes `text` for every "{text}" in the template.
std::string render_template(const std::string& tmpl, const std::string& text);

struct QueriedSample {
  Matrix hidden;  // P x d_in
  Matrix scores;  // P x L
};

/// Queries every template once for one input: exactly P encode calls.
QueriedSample query_sample(EncoderProvider& provider, const DatasetManifest& manifest,
                           const std::string& sample_id, const std::string& text);

/// Empty-input queries, one per template. Returns P x L.
Matrix query_empty(EncoderProvider& provider, const DatasetManifest& manifest);

struct LabeledText {
  std::string text;
  std::size_t label = 0;  // 0-based
};

/// Builds a pack by querying `provider` for every sample and every template.
FeaturePack build_pack(EncoderProvider& provider, const DatasetManifest& manifest,
                       std::span<const LabeledText> samples, std::size_t hidden_dim);

}  // namespace mpd
