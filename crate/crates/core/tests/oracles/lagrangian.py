import sympy as sp
t=sp.symbols('t')
th1,th2=sp.Function('th1')(t),sp.Function('th2')(t)
l1,l2,m1,m2,c1,c2,I1,I2,g0,al=0.674,0.545,1.95,0.85,0.6135,0.4331,0.050,0.016,9.81,sp.Symbol('al')
a1=th1; a2=th1-th2  # absolute CW angles from +y
p1=sp.Matrix([c1*sp.sin(a1), c1*sp.cos(a1)])
e=sp.Matrix([l1*sp.sin(a1), l1*sp.cos(a1)])
p2=e+sp.Matrix([c2*sp.sin(a2), c2*sp.cos(a2)])
v1=p1.diff(t); v2=p2.diff(t)
T=sp.Rational(1,2)*m1*v1.dot(v1)+sp.Rational(1,2)*m2*v2.dot(v2)+sp.Rational(1,2)*I1*a1.diff(t)**2+sp.Rational(1,2)*I2*a2.diff(t)**2
V=g0*sp.sin(al)*(m1*p1[1]+m2*p2[1])
q=[th1,th2]; qd=[x.diff(t) for x in q]; qdd=[x.diff(t,2) for x in q]
L=T-V
eqs=[sp.expand(sp.diff(L.diff(qd[i]),t)-L.diff(q[i])) for i in range(2)]
M=sp.Matrix(2,2,lambda i,j: eqs[i].coeff(qdd[j]))
G=sp.Matrix([V.diff(q[i]) for i in range(2)])
A,Bq,W1,W2=sp.symbols('A B W1 W2')
sub={th1:A,th2:Bq}
def num(expr,vals): 
    e=expr
    e=e.subs({qdd[0]:0,qdd[1]:0}).subs({qd[0]:W1,qd[1]:W2}).subs(sub)
    return sp.N(e.subs(vals),17)
print("M(0,0):",[num(M[i,j],{A:0,Bq:0}) for i in range(2) for j in range(2)])
print("M(0,pi/2):",[num(M[i,j],{A:0,Bq:sp.pi/2}) for i in range(2) for j in range(2)])
print("g(al=.1,.3,.7):",[num(G[i],{al:0.1,A:0.3,Bq:0.7}) for i in range(2)])
# Coriolis+centrifugal torque vector h = eq - M qdd - G
h=[sp.expand(eqs[i]-sum(M[i,j]*qdd[j] for j in range(2))-G[i]) for i in range(2)]
vals={A:0.3,Bq:0.7,W1:0.8,W2:-1.1,al:0.1}
print("Cqd(.3,.7,.8,-1.1):",[num(h[i],vals) for i in range(2)])
# momentum p = M th_dot + J phi_dot ; beta = g - C^T qd ; need C^T qd: use Christoffel
Msym=M.subs(sub)
def dM(i,j,k): return sp.diff(Msym[i,j],[A,Bq][k])
Cm=sp.zeros(2,2)
for k in range(2):
  for j in range(2):
    Cm[k,j]=sum(sp.Rational(1,2)*(dM(k,j,i)+dM(k,i,j)-dM(i,j,k))*[W1,W2][i] for i in range(2))
w=sp.Matrix([W1,W2])
beta=G.subs(sub)-Cm.T*w
print("beta(.1;.3,.7,.8,-1.1):",[sp.N(beta[i].subs(vals),17) for i in range(2)])
pm=Msym*w+sp.Matrix([0.12*0.4,0.08*(-0.9)])
print("p(.3,.7,.8,-1.1; phid=.4,-.9):",[sp.N(pm[i].subs(vals),17) for i in range(2)])
print("Cm*w check:",[sp.N((Cm*w)[i].subs(vals),17) for i in range(2)])
