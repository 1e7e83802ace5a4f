#include "sli/core/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace sli::kernels {

namespace {

inline double dot_arb(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

void matmul_serial(Mat& out, const Mat& a, const Mat& b) {
    assert(a.cols == b.rows);
    out = Mat(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul(Mat& out, const Mat& a, const Mat& b) {
    assert(a.cols == b.rows);
    out = Mat(a.rows, b.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_nt_serial(Mat& out, const Mat& a, const Mat& b) {
    assert(a.cols == b.cols);
    out = Mat(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < b.rows; ++j) orow[j] = dot_arb(arow, b.row(j), a.cols);
    }
}

void matmul_nt(Mat& out, const Mat& a, const Mat& b) {
    assert(a.cols == b.cols);
    out = Mat(a.rows, b.rows);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < b.rows; ++j) orow[j] = dot_arb(arow, b.row(j), a.cols);
    }
}

void matmul_tn_serial(Mat& out, const Mat& a, const Mat& b) {
    assert(a.rows == b.rows);
    out = Mat(a.cols, b.cols);
    for (int i = 0; i < a.cols; ++i) {
        double* orow = out.row(i);
        for (int k = 0; k < a.rows; ++k) {
            const double av = a.at(k, i);
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_tn(Mat& out, const Mat& a, const Mat& b) {
    assert(a.rows == b.rows);
    out = Mat(a.cols, b.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.cols; ++i) {
        double* orow = out.row(i);
        for (int k = 0; k < a.rows; ++k) {
            const double av = a.at(k, i);
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_acc(Mat& out, const Mat& a, const Mat& b) {
    assert(a.cols == b.rows && out.rows == a.rows && out.cols == b.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_tn_acc(Mat& out, const Mat& a, const Mat& b) {
    assert(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.cols; ++i) {
        double* orow = out.row(i);
        for (int k = 0; k < a.rows; ++k) {
            const double av = a.at(k, i);
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_nt_acc(Mat& out, const Mat& a, const Mat& b) {
    assert(a.cols == b.cols && out.rows == a.rows && out.cols == b.rows);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < b.rows; ++j) orow[j] += dot_arb(arow, b.row(j), a.cols);
    }
}

void softmax_rows(Mat& m) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m.rows; ++i) {
        double* row = m.row(i);
        double mx = row[0];
        for (int j = 1; j < m.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < m.cols; ++j) row[j] *= inv;
    }
}

}  // namespace sli::kernels
