#include "httplib.h"

#include "scanlearn/chat_backend.hpp"
#include "scanlearn/errors.hpp"

namespace scanlearn {

namespace {

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

  HttpResponse post(const std::string& url, const HttpHeaders& headers, const std::string& body) override {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
      throw TransportError("not an absolute URL: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    const auto origin = url.substr(0, path_start);
    const auto path = path_start == std::string::npos ? std::string("/") : url.substr(path_start);

    httplib::Client client(origin);
    if (!client.is_valid()) {
      throw TransportError("cannot open a client for " + origin + " (https needs TLS support)");
    }
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);

    httplib::Headers request_headers;
    std::string content_type = "application/json";
    for (const auto& [name, value] : headers) {
      if (name == "Content-Type") {
        content_type = value;
      } else {
        request_headers.emplace(name, value);
      }
    }
    const auto result = client.Post(path, request_headers, body, content_type);
    if (!result) {
      throw TransportError("request to " + url + " failed: " + httplib::to_string(result.error()));
    }
    return {result->status, result->body};
  }

 private:
  std::chrono::seconds timeout_;
};

}  // namespace

std::shared_ptr<HttpTransport> make_httplib_transport(std::chrono::seconds timeout) {
  return std::make_shared<HttplibTransport>(timeout);
}

}  // namespace scanlearn
