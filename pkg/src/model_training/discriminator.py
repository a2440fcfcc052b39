# src/model_training/discriminator.py
import torch.nn as nn

from src.model_training.attention_unet import init_weights


class PatchDiscriminator(nn.Module):
    """Four-layer strided convolutional patch classifier.

    Outputs an unbounded score map (B, 1, H/8, W/8); the least-squares losses push real
    patches toward 1 and fake patches toward 0.
    """

    def __init__(self, in_channels: int = 1, base_channels: int = 32):
        super().__init__()

        def block(in_filters, out_filters, normalize=True):
            layers = [nn.Conv2d(in_filters, out_filters, 4, stride=2, padding=1)]
            if normalize:
                layers.append(nn.InstanceNorm2d(out_filters, affine=True))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            return layers

        self.model = nn.Sequential(
            *block(in_channels, base_channels, normalize=False),
            *block(base_channels, base_channels * 2),
            *block(base_channels * 2, base_channels * 4),
            nn.Conv2d(base_channels * 4, 1, 3, padding=1),
        )
        init_weights(self)

    def forward(self, x):
        return self.model(x)
