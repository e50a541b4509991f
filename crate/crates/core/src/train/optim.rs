//! SGD with Nesterov momentum and L2 weight decay.
//!
//! ```text
//! g' = grad + weight_decay * param
//! v' = momentum * v + g'
//! param' = param - lr * (g' + momentum * v')
//! ```

/// One scalar update; returns `(param', velocity')`.
#[inline]
pub fn nesterov_update(param: f32, grad: f32, velocity: f32, lr: f32, momentum: f32, weight_decay: f32) -> (f32, f32) {
    let g = grad + weight_decay * param;
    let v = momentum * velocity + g;
    (param - lr * (g + momentum * v), v)
}

/// In-place update of a parameter slice and its velocity buffer.
pub fn sgd_nesterov_step(params: &mut [f32], grads: &[f32], velocity: &mut [f32], lr: f32, momentum: f32, weight_decay: f32) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length");
    assert_eq!(params.len(), velocity.len(), "parameter/velocity length");
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        (*p, *v) = nesterov_update(*p, g, *v, lr, momentum, weight_decay);
    }
}
