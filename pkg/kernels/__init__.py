"""Initializes the kernels module."""
import kernels.core
import kernels.mhaar
import kernels.analytic_toy
import kernels.exchange
import kernels.rjmcmc
import kernels.latent_rb
import kernels.ssm
import kernels.ssm_mhaar


__all__ = [kernels.core,
           kernels.mhaar,
           kernels.analytic_toy,
           kernels.exchange,
           kernels.rjmcmc,
           kernels.latent_rb,
           kernels.ssm,
           kernels.ssm_mhaar]
