#include <cstdio>

int main() {
    double cooling = 0.99993;
    int iters = 40;
    double temperature = 1.5;
    double score = 0.0;
    for (int i = 0; i < iters; i++) {
        temperature *= cooling;
        score += temperature;
    }
    std::printf("{\"score\": %.9f}\n", score);
    return 0;
}
