#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "actseg/active_loop.hpp"

namespace actseg {

struct ApiServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::filesystem::path static_dir;  // served at / when set
};

/// JSON API over a Session. Handlers only read snapshots or enqueue
/// commands; they never touch session state directly.
class ApiServer {
public:
    ApiServer(Session& session, ApiServerConfig cfg);
    ~ApiServer();

    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    /// Binds and starts serving on a background thread; returns the bound port.
    int start();

    /// Serves on the calling thread until stop() is called from elsewhere.
    void run();

    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace actseg
