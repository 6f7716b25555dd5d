fn main() {
    println!("bandgap2d: pipeline driver (under construction)");
}
