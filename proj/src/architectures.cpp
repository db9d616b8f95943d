#include <string>

#include "retino/convnet.hpp"

namespace retino::convnet {

Graph vgg16_graph() {
  Graph g;
  int x = g.input(224, 224, 3);
  const int widths[5] = {64, 128, 256, 512, 512};
  const int convs[5] = {2, 2, 3, 3, 3};
  for (int b = 0; b < 5; ++b) {
    const std::string block = "block" + std::to_string(b + 1);
    for (int c = 0; c < convs[b]; ++c) {
      x = g.conv(block + "_conv" + std::to_string(c + 1), x, widths[b], 3, 1,
                 Padding::Same, true, Activation::Relu);
    }
    x = g.max_pool(block + "_pool", x, 2, 2);
  }
  return g;  // 7 x 7 x 512
}

namespace {

constexpr float kResnetBnEps = 1.001e-5f;

int resnet_v2_block(Graph& g, int x, int filters, int stride, bool conv_shortcut,
                    const std::string& name) {
  int preact = g.batch_norm(name + "_preact_bn", x, kResnetBnEps);
  preact = g.activation(name + "_preact_relu", preact, Activation::Relu);

  int shortcut = x;
  if (conv_shortcut) {
    shortcut = g.conv(name + "_0_conv", preact, 4 * filters, 1, stride,
                      Padding::Valid, true);
  } else if (stride > 1) {
    shortcut = g.max_pool(name + "_shortcut_pool", x, 1, stride);
  }

  int y = g.conv(name + "_1_conv", preact, filters, 1, 1, Padding::Valid, false);
  y = g.batch_norm(name + "_1_bn", y, kResnetBnEps);
  y = g.activation(name + "_1_relu", y, Activation::Relu);
  y = g.zero_pad(name + "_2_pad", y, 1, 1, 1, 1);
  y = g.conv(name + "_2_conv", y, filters, 3, stride, Padding::Valid, false);
  y = g.batch_norm(name + "_2_bn", y, kResnetBnEps);
  y = g.activation(name + "_2_relu", y, Activation::Relu);
  y = g.conv(name + "_3_conv", y, 4 * filters, 1, 1, Padding::Valid, true);
  return g.add(name + "_out", shortcut, y);
}

int resnet_v2_stack(Graph& g, int x, int filters, int blocks, int stride,
                    const std::string& name) {
  x = resnet_v2_block(g, x, filters, 1, true, name + "_block1");
  for (int i = 2; i < blocks; ++i) {
    x = resnet_v2_block(g, x, filters, 1, false, name + "_block" + std::to_string(i));
  }
  return resnet_v2_block(g, x, filters, stride, false,
                         name + "_block" + std::to_string(blocks));
}

}  // namespace

Graph resnet50v2_graph() {
  Graph g;
  int x = g.input(224, 224, 3);
  x = g.zero_pad("conv1_pad", x, 3, 3, 3, 3);
  x = g.conv("conv1_conv", x, 64, 7, 2, Padding::Valid, true);
  x = g.zero_pad("pool1_pad", x, 1, 1, 1, 1);
  x = g.max_pool("pool1_pool", x, 3, 2);
  x = resnet_v2_stack(g, x, 64, 3, 2, "conv2");
  x = resnet_v2_stack(g, x, 128, 4, 2, "conv3");
  x = resnet_v2_stack(g, x, 256, 6, 2, "conv4");
  x = resnet_v2_stack(g, x, 512, 3, 1, "conv5");
  x = g.batch_norm("post_bn", x, kResnetBnEps);
  x = g.activation("post_relu", x, Activation::Relu);
  return g;  // 7 x 7 x 2048
}

namespace {

constexpr float kEffBnEps = 1e-3f;

struct MbConvStage {
  int kernel;
  int repeats;
  int filters_in;
  int filters_out;
  int expand_ratio;
  int stride;
};

// B0 stages 2..8 of the published stage table (stage 1 is the stem conv,
// stage 9 the 1x1 top conv).
constexpr MbConvStage kB0Stages[] = {
    {3, 1, 32, 16, 1, 1},   {3, 2, 16, 24, 6, 2},   {5, 2, 24, 40, 6, 2},
    {3, 3, 40, 80, 6, 2},   {5, 3, 80, 112, 6, 1},  {5, 4, 112, 192, 6, 2},
    {3, 1, 192, 320, 6, 1},
};

// Padding Keras computes for stride-2 convs on even-sized inputs.
std::array<int, 4> correct_pad(int kernel) {
  const int c = kernel / 2;
  return {c - 1, c, c - 1, c};
}

int mbconv_block(Graph& g, int x, const MbConvStage& s, int filters_in, int stride,
                 const std::string& name) {
  const int filters = filters_in * s.expand_ratio;
  int y = x;
  if (s.expand_ratio != 1) {
    y = g.conv(name + "expand_conv", y, filters, 1, 1, Padding::Same, false);
    y = g.batch_norm(name + "expand_bn", y, kEffBnEps);
    y = g.activation(name + "expand_activation", y, Activation::Swish);
  }
  Padding dw_pad = Padding::Same;
  if (stride == 2) {
    const auto p = correct_pad(s.kernel);
    y = g.zero_pad(name + "dwconv_pad", y, p[0], p[1], p[2], p[3]);
    dw_pad = Padding::Valid;
  }
  y = g.depthwise_conv(name + "dwconv", y, s.kernel, stride, dw_pad);
  y = g.batch_norm(name + "bn", y, kEffBnEps);
  y = g.activation(name + "activation", y, Activation::Swish);

  // Squeeze-and-excitation with ratio 0.25 of the block's input width.
  const int filters_se = std::max(1, filters_in / 4);
  int se = g.global_avg_pool(name + "se_squeeze", y);
  se = g.conv(name + "se_reduce", se, filters_se, 1, 1, Padding::Same, true,
              Activation::Swish);
  se = g.conv(name + "se_expand", se, filters, 1, 1, Padding::Same, true,
              Activation::Sigmoid);
  y = g.multiply(name + "se_excite", y, se);

  y = g.conv(name + "project_conv", y, s.filters_out, 1, 1, Padding::Same, false);
  y = g.batch_norm(name + "project_bn", y, kEffBnEps);
  if (stride == 1 && filters_in == s.filters_out) {
    y = g.add(name + "add", y, x);
  }
  return y;
}

}  // namespace

Graph efficientnetb0_graph(std::vector<float> post_norm_scale) {
  Graph g;
  int x = g.input(224, 224, 3);
  x = g.rescale("rescaling", x, {1.0f / 255.0f}, {});
  x = g.normalize("normalization", x);
  if (!post_norm_scale.empty()) {
    x = g.rescale("rescaling_1", x, std::move(post_norm_scale), {});
  }
  const auto p = correct_pad(3);
  x = g.zero_pad("stem_conv_pad", x, p[0], p[1], p[2], p[3]);
  x = g.conv("stem_conv", x, 32, 3, 2, Padding::Valid, false);
  x = g.batch_norm("stem_bn", x, kEffBnEps);
  x = g.activation("stem_activation", x, Activation::Swish);

  for (std::size_t i = 0; i < std::size(kB0Stages); ++i) {
    const MbConvStage& s = kB0Stages[i];
    for (int j = 0; j < s.repeats; ++j) {
      const std::string name =
          "block" + std::to_string(i + 1) + static_cast<char>('a' + j) + "_";
      const int filters_in = j == 0 ? s.filters_in : s.filters_out;
      const int stride = j == 0 ? s.stride : 1;
      x = mbconv_block(g, x, s, filters_in, stride, name);
    }
  }

  x = g.conv("top_conv", x, 1280, 1, 1, Padding::Same, false);
  x = g.batch_norm("top_bn", x, kEffBnEps);
  x = g.activation("top_activation", x, Activation::Swish);
  return g;  // 7 x 7 x 1280
}

}  // namespace retino::convnet
