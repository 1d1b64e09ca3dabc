#include "canmap/common.hpp"

#include <iostream>
#include <mutex>

namespace canmap {

namespace {
std::mutex g_mutex;
WarnHandler g_handler;
} // namespace

void warn(const std::string& msg) {
    std::lock_guard<std::mutex> lk(g_mutex);
    if (g_handler) {
        g_handler(msg);
        return;
    }
    std::cerr << "warning: " << msg << "\n";
}

WarnHandler set_warn_handler(WarnHandler h) {
    std::lock_guard<std::mutex> lk(g_mutex);
    std::swap(g_handler, h);
    return h;
}

} // namespace canmap
