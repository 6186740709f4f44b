#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "mpd/encoder.hpp"
#include "mpd/errors.hpp"

namespace mpd {

struct RemoteProvider::Impl {
  explicit Impl(const std::string& endpoint) : client(endpoint) {}
  httplib::Client client;
  std::mutex mutex;  // httplib::Client is not safe for concurrent requests
};

RemoteProvider::RemoteProvider(RemoteSettings settings) : settings_(std::move(settings)) {
  settings_.validate();
  if (!settings_.auth_env.empty()) {
    const char* value = std::getenv(settings_.auth_env.c_str());
    if (value == nullptr) throw ConfigError("remote provider: environment variable " + settings_.auth_env + " is not set");
    auth_token_ = value;
  }
  impl_ = std::make_unique<Impl>(settings_.endpoint);
  if (!impl_->client.is_valid()) throw ConfigError("remote provider: invalid endpoint " + settings_.endpoint);
  const auto timeout = std::chrono::milliseconds(settings_.timeout_ms);
  impl_->client.set_connection_timeout(timeout);
  impl_->client.set_read_timeout(timeout);
  impl_->client.set_write_timeout(timeout);
  if (!auth_token_.empty()) impl_->client.set_bearer_token_auth(auth_token_);
}

RemoteProvider::~RemoteProvider() = default;

EncodeResult RemoteProvider::do_encode(const EncodeRequest& request) {
  const std::string body = encode_request_json(request).dump();
  std::string last_error;
  int last_status = 0;
  for (int attempt = 0; attempt < settings_.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(settings_.backoff_ms << (attempt - 1)));
    }
    httplib::Result res;
    {
      std::lock_guard<std::mutex> lock(impl_->mutex);
      res = impl_->client.Post(kEncodePath, body, "application/json");
    }
    if (!res) {
      last_error = httplib::to_string(res.error());
      last_status = 0;
      continue;
    }
    last_status = res->status;
    if (res->status == 200) return parse_encode_response(res->body);
    last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
    // Client errors will not improve on retry.
    if (res->status >= 400 && res->status < 500) break;
  }
  throw TransportError("encode request to " + settings_.endpoint + " failed: " + last_error, last_status);
}

}  // namespace mpd
