//! Builds the two metasurface stacks and inspects the layout: layer planes,
//! inter-layer element distances, and the antenna line.

use simstack::geometry::{build_stack_geometry, PlaneRef, StackConfig};
use simstack::SPEED_OF_LIGHT;

fn main() {
    let f0 = 28e9;
    let wavelength = SPEED_OF_LIGHT / f0;

    // seven layers of 10 x 10 half-wavelength-spaced atoms in a 5 cm stack
    let config = StackConfig::new(
        7,
        10,
        10,
        wavelength / 2.0,
        0.05,
        wavelength * wavelength / 4.0,
        4,
        wavelength / 2.0,
    )
    .unwrap();

    let tx = build_stack_geometry(&config, [0.0, 0.0, 0.0], 1);
    let rx = build_stack_geometry(&config, [0.0, 250.0, 0.0], -1);

    println!("inter-layer gap: {:.4} mm", 1e3 * tx.layer_gap());
    println!("transmit layer planes (y, meters):");
    for l in 1..=config.num_layers {
        println!("  layer {l}: {:.5}", tx.layer_positions(l)[0][1]);
    }
    println!("transmit emitting face center: {:?}", tx.face_center());
    println!("receive receiving face center: {:?}", rx.face_center());

    // distances from one atom to its neighbors on the next layer
    let aligned = tx.inter_layer_distance(PlaneRef::Layer(1), 0, PlaneRef::Layer(2), 0);
    let offset = tx.inter_layer_distance(PlaneRef::Layer(1), 0, PlaneRef::Layer(2), 10);
    println!("aligned atoms, adjacent layers: {:.4} mm (= gap)", 1e3 * aligned);
    println!("one pitch off in x:            {:.4} mm", 1e3 * offset);

    let antennas = tx.antenna_positions();
    println!("antenna line ({} elements):", antennas.len());
    for (s, p) in antennas.iter().enumerate() {
        println!("  antenna {s}: x = {:+.4} mm", 1e3 * p[0]);
    }
}
